#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace stamp::cli {

/// `stamp <command> [--config <path>]`. Returns the process exit status;
/// failures print "error: <summary>" and the remediation line to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// `stamp-synth generate|evaluate ...`.
int run_synth(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace stamp::cli
