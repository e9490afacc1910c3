#include "stamp/model/bundle.hpp"

#include "stamp/error.hpp"
#include "stamp/model/transformer.hpp"
#include "stamp/rng.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <string_view>

namespace stamp::model {
namespace {

constexpr char kMagic[8] = {'S', 'T', 'A', 'M', 'P', 'B', 'D', 'L'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "bundle I/O assumes a little-endian host");

std::string checksum(const std::vector<float>& w)
{
    const std::string_view bytes(reinterpret_cast<const char*>(w.data()), w.size() * sizeof(float));
    return fmt::format("{:016x}", hash_string(bytes));
}

nlohmann::json model_json(const ModelConfig& m)
{
    return {{"dim_input", m.dim_input}, {"dim_model", m.dim_model}, {"n_layers", m.n_layers},
            {"n_heads", m.n_heads},     {"mlp_ratio", m.mlp_ratio}, {"dropout", m.dropout},
            {"n_classes", m.n_classes}};
}

nlohmann::json train_json(const TrainConfig& t)
{
    return {{"batch_size", t.batch_size}, {"max_bag_size", t.max_bag_size}, {"max_epochs", t.max_epochs},
            {"patience", t.patience},     {"lr", t.lr},                     {"weight_decay", t.weight_decay},
            {"seed", t.seed}};
}

[[noreturn]] void malformed(const std::filesystem::path& path, const std::string& what)
{
    throw Error(ErrorCode::MalformedBundle, "Malformed model bundle: " + what, path.string());
}

} // namespace

void write_bundle(const std::filesystem::path& path, const ModelBundle& b)
{
    const Transformer<float> shape(b.model);
    if (shape.n_params() != b.weights.size())
        throw Error(ErrorCode::MalformedBundle, "weight count does not match the model configuration",
                    path.string());
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& t : shape.tensors()) tensors.push_back({{"name", t.name}, {"shape", t.shape}});
    const nlohmann::json manifest = {
        {"format", "stamp-bundle"},
        {"model", model_json(b.model)},
        {"train", train_json(b.train)},
        {"categories", b.categories},
        {"target_label", b.target_label},
        {"extractor_id", b.extractor_id},
        {"feature_dim", b.feature_dim},
        {"cat_labels", b.cat_labels},
        {"cont_labels", b.cont_labels},
        {"tabular", b.tabular.to_json()},
        {"fingerprint", b.fingerprint},
        {"tensors", tensors},
        {"checksum", checksum(b.weights)},
    };
    const std::string text = manifest.dump();

    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoError, "cannot write model bundle", path.string());
        const std::uint32_t version = kVersion;
        const std::uint64_t len = text.size();
        out.write(kMagic, sizeof kMagic);
        out.write(reinterpret_cast<const char*>(&version), sizeof version);
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.write(reinterpret_cast<const char*>(b.weights.data()),
                  static_cast<std::streamsize>(b.weights.size() * sizeof(float)));
        if (!out) throw Error(ErrorCode::IoError, "write failed", path.string());
    }
    std::filesystem::rename(tmp, path);
}

ModelBundle read_bundle(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open model bundle", path.string());
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) malformed(path, "bad header");
    if (version != kVersion) malformed(path, fmt::format("unsupported version {}", version));
    if (len > (std::uint64_t{1} << 30)) malformed(path, "manifest too large");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) malformed(path, "truncated manifest");

    ModelBundle b;
    try {
        const auto m = nlohmann::json::parse(text);
        const auto& mc = m.at("model");
        b.model.dim_input = mc.at("dim_input").get<int>();
        b.model.dim_model = mc.at("dim_model").get<int>();
        b.model.n_layers = mc.at("n_layers").get<int>();
        b.model.n_heads = mc.at("n_heads").get<int>();
        b.model.mlp_ratio = mc.at("mlp_ratio").get<int>();
        b.model.dropout = mc.at("dropout").get<double>();
        b.model.n_classes = mc.at("n_classes").get<int>();
        const auto& tc = m.at("train");
        b.train.batch_size = tc.at("batch_size").get<int>();
        b.train.max_bag_size = tc.at("max_bag_size").get<int>();
        b.train.max_epochs = tc.at("max_epochs").get<int>();
        b.train.patience = tc.at("patience").get<int>();
        b.train.lr = tc.at("lr").get<double>();
        b.train.weight_decay = tc.at("weight_decay").get<double>();
        b.train.seed = tc.at("seed").get<std::uint64_t>();
        b.categories = m.at("categories").get<std::vector<std::string>>();
        b.target_label = m.at("target_label").get<std::string>();
        b.extractor_id = m.at("extractor_id").get<std::string>();
        b.feature_dim = m.at("feature_dim").get<int>();
        b.cat_labels = m.at("cat_labels").get<std::vector<std::string>>();
        b.cont_labels = m.at("cont_labels").get<std::vector<std::string>>();
        b.tabular = cohort::TabularSchema::from_json(m.at("tabular"));
        b.fingerprint = m.at("fingerprint");

        const Transformer<float> shape(b.model);
        const auto& tensors = m.at("tensors");
        if (tensors.size() != shape.tensors().size()) malformed(path, "tensor list does not match the model");
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            const auto& t = shape.tensors()[i];
            if (tensors[i].at("name").get<std::string>() != t.name ||
                tensors[i].at("shape").get<std::vector<int>>() != t.shape)
                malformed(path, "tensor " + t.name + " does not match the model");
        }
        if (static_cast<int>(b.categories.size()) != b.model.n_classes)
            malformed(path, "category count does not match the head");
        b.weights.resize(shape.n_params());
        in.read(reinterpret_cast<char*>(b.weights.data()),
                static_cast<std::streamsize>(b.weights.size() * sizeof(float)));
        if (!in) malformed(path, "truncated tensor data");
        in.peek();
        if (!in.eof()) malformed(path, "trailing bytes after tensor data");
        if (checksum(b.weights) != m.at("checksum").get<std::string>()) malformed(path, "checksum mismatch");
    } catch (const nlohmann::json::exception& e) {
        malformed(path, e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::MalformedBundle) throw;
        malformed(path, e.what());
    }
    return b;
}

} // namespace stamp::model
