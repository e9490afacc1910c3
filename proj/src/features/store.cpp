#include "stamp/features/store.hpp"

#include "stamp/error.hpp"

#include <hdf5.h>
#include <fcntl.h>
#include <unistd.h>

#include <cmath>
#include <mutex>

namespace stamp::features {
namespace {

// The serial HDF5 build is not thread-safe.
std::mutex& h5_mutex()
{
    static std::mutex m;
    return m;
}

void silence_hdf5()
{
    static std::once_flag once;
    std::call_once(once, [] { H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr); });
}

class Handle {
public:
    Handle(hid_t id, herr_t (*close)(hid_t)) : id_(id), close_(close) {}
    ~Handle()
    {
        if (id_ >= 0) close_(id_);
    }
    Handle(const Handle&) = delete;
    Handle& operator=(const Handle&) = delete;
    hid_t get() const { return id_; }
    bool ok() const { return id_ >= 0; }

private:
    hid_t id_;
    herr_t (*close_)(hid_t);
};

[[noreturn]] void malformed(const std::filesystem::path& path, const std::string& what)
{
    throw Error(ErrorCode::MalformedFeatureFile, "Malformed feature file: " + what, path.string());
}

void check(herr_t status, const std::filesystem::path& path, const char* what)
{
    if (status < 0) throw Error(ErrorCode::IoError, std::string("HDF5 write failed: ") + what, path.string());
}

void write_string_attr(hid_t obj, const char* name, const std::string& value, const std::filesystem::path& path)
{
    Handle type(H5Tcopy(H5T_C_S1), H5Tclose);
    H5Tset_size(type.get(), std::max<std::size_t>(1, value.size()));
    H5Tset_strpad(type.get(), H5T_STR_NULLPAD);
    Handle space(H5Screate(H5S_SCALAR), H5Sclose);
    Handle attr(H5Acreate2(obj, name, type.get(), space.get(), H5P_DEFAULT, H5P_DEFAULT), H5Aclose);
    if (!attr.ok()) check(-1, path, name);
    check(H5Awrite(attr.get(), type.get(), value.data()), path, name);
}

template <typename T>
void write_scalar_attr(hid_t obj, const char* name, hid_t mem_type, hid_t file_type, T value,
                       const std::filesystem::path& path)
{
    Handle space(H5Screate(H5S_SCALAR), H5Sclose);
    Handle attr(H5Acreate2(obj, name, file_type, space.get(), H5P_DEFAULT, H5P_DEFAULT), H5Aclose);
    if (!attr.ok()) check(-1, path, name);
    check(H5Awrite(attr.get(), mem_type, &value), path, name);
}

std::string read_string_attr(hid_t obj, const char* name, const std::filesystem::path& path)
{
    if (H5Aexists(obj, name) <= 0) malformed(path, std::string("missing attribute '") + name + "'");
    Handle attr(H5Aopen(obj, name, H5P_DEFAULT), H5Aclose);
    Handle type(H5Aget_type(attr.get()), H5Tclose);
    if (H5Tget_class(type.get()) != H5T_STRING) malformed(path, std::string("attribute '") + name + "' is not a string");
    if (H5Tis_variable_str(type.get()) > 0) {
        Handle mem(H5Tcopy(H5T_C_S1), H5Tclose);
        H5Tset_size(mem.get(), H5T_VARIABLE);
        char* buf = nullptr;
        if (H5Aread(attr.get(), mem.get(), &buf) < 0 || buf == nullptr) malformed(path, name);
        std::string s(buf);
        H5free_memory(buf);
        return s;
    }
    const std::size_t size = H5Tget_size(type.get());
    std::string s(size, '\0');
    Handle mem(H5Tcopy(H5T_C_S1), H5Tclose);
    H5Tset_size(mem.get(), size);
    H5Tset_strpad(mem.get(), H5T_STR_NULLPAD);
    if (H5Aread(attr.get(), mem.get(), s.data()) < 0) malformed(path, name);
    s.resize(s.find('\0') == std::string::npos ? s.size() : s.find('\0'));
    return s;
}

template <typename T>
T read_scalar_attr(hid_t obj, const char* name, hid_t mem_type, const std::filesystem::path& path)
{
    if (H5Aexists(obj, name) <= 0) malformed(path, std::string("missing attribute '") + name + "'");
    Handle attr(H5Aopen(obj, name, H5P_DEFAULT), H5Aclose);
    T value{};
    if (H5Aread(attr.get(), mem_type, &value) < 0) malformed(path, std::string("unreadable attribute '") + name + "'");
    return value;
}

struct Shape {
    hsize_t rows = 0, cols = 0;
};

Shape dataset_shape(hid_t file, const char* name, const std::filesystem::path& path)
{
    if (H5Lexists(file, name, H5P_DEFAULT) <= 0) malformed(path, std::string("missing dataset '") + name + "'");
    Handle ds(H5Dopen2(file, name, H5P_DEFAULT), H5Dclose);
    if (!ds.ok()) malformed(path, std::string("cannot open dataset '") + name + "'");
    Handle space(H5Dget_space(ds.get()), H5Sclose);
    if (H5Sget_simple_extent_ndims(space.get()) != 2) malformed(path, std::string("dataset '") + name + "' is not 2-D");
    hsize_t dims[2];
    H5Sget_simple_extent_dims(space.get(), dims, nullptr);
    return {dims[0], dims[1]};
}

FeatureMatrix read_impl(const std::filesystem::path& path, bool payload)
{
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::IoError, "feature file not found", path.string());
    std::lock_guard lock(h5_mutex());
    silence_hdf5();
    if (H5Fis_hdf5(path.c_str()) <= 0) malformed(path, "not an HDF5 file");
    Handle file(H5Fopen(path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT), H5Fclose);
    if (!file.ok()) malformed(path, "cannot open");

    FeatureMatrix fm;
    const Shape fs = dataset_shape(file.get(), "feats", path);
    const Shape cs = dataset_shape(file.get(), "coords", path);
    if (cs.cols != 2 || cs.rows != fs.rows) malformed(path, "coords must be n x 2 matching feats");
    if (fs.rows == 0 || fs.cols == 0) malformed(path, "empty feature matrix");
    fm.n = static_cast<int>(fs.rows);
    fm.d = static_cast<int>(fs.cols);
    fm.extractor_id = read_string_attr(file.get(), "extractor", path);
    fm.norm = read_string_attr(file.get(), "norm", path);
    fm.tile_px = read_scalar_attr<int>(file.get(), "tile_px", H5T_NATIVE_INT, path);
    fm.target_mpp = read_scalar_attr<double>(file.get(), "target_mpp", H5T_NATIVE_DOUBLE, path);
    if (!payload) return fm;

    fm.feats.resize(static_cast<std::size_t>(fs.rows) * fs.cols);
    fm.coords.resize(static_cast<std::size_t>(cs.rows) * 2);
    {
        Handle ds(H5Dopen2(file.get(), "feats", H5P_DEFAULT), H5Dclose);
        if (H5Dread(ds.get(), H5T_NATIVE_FLOAT, H5S_ALL, H5S_ALL, H5P_DEFAULT, fm.feats.data()) < 0)
            malformed(path, "unreadable feats");
    }
    {
        Handle ds(H5Dopen2(file.get(), "coords", H5P_DEFAULT), H5Dclose);
        if (H5Dread(ds.get(), H5T_NATIVE_INT32, H5S_ALL, H5S_ALL, H5P_DEFAULT, fm.coords.data()) < 0)
            malformed(path, "unreadable coords");
    }
    for (float v : fm.feats)
        if (!std::isfinite(v)) malformed(path, "non-finite feature values");
    return fm;
}

} // namespace

std::string feature_dir_name(bool normalized, const std::string& extractor_id)
{
    return std::string("STAMP_") + (normalized ? "macenko" : "raw") + "_" + extractor_id;
}

void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& fm)
{
    if (fm.n <= 0 || fm.d <= 0 || fm.feats.size() != static_cast<std::size_t>(fm.n) * fm.d ||
        fm.coords.size() != static_cast<std::size_t>(fm.n) * 2) {
        throw Error(ErrorCode::InvalidValue, "inconsistent feature matrix", path.string());
    }
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::lock_guard lock(h5_mutex());
        silence_hdf5();
        Handle fcpl(H5Pcreate(H5P_FILE_CREATE), H5Pclose);
        H5Pset_obj_track_times(fcpl.get(), false);
        Handle file(H5Fcreate(tmp.c_str(), H5F_ACC_TRUNC, fcpl.get(), H5P_DEFAULT), H5Fclose);
        if (!file.ok()) throw Error(ErrorCode::IoError, "cannot create feature file", path.string());
        Handle dcpl(H5Pcreate(H5P_DATASET_CREATE), H5Pclose);
        H5Pset_obj_track_times(dcpl.get(), false);

        const hsize_t fdims[2] = {static_cast<hsize_t>(fm.n), static_cast<hsize_t>(fm.d)};
        Handle fspace(H5Screate_simple(2, fdims, nullptr), H5Sclose);
        Handle fds(H5Dcreate2(file.get(), "feats", H5T_IEEE_F32LE, fspace.get(), H5P_DEFAULT, dcpl.get(),
                              H5P_DEFAULT),
                   H5Dclose);
        if (!fds.ok()) check(-1, path, "feats");
        check(H5Dwrite(fds.get(), H5T_NATIVE_FLOAT, H5S_ALL, H5S_ALL, H5P_DEFAULT, fm.feats.data()), path, "feats");

        const hsize_t cdims[2] = {static_cast<hsize_t>(fm.n), 2};
        Handle cspace(H5Screate_simple(2, cdims, nullptr), H5Sclose);
        Handle cds(H5Dcreate2(file.get(), "coords", H5T_STD_I32LE, cspace.get(), H5P_DEFAULT, dcpl.get(),
                              H5P_DEFAULT),
                   H5Dclose);
        if (!cds.ok()) check(-1, path, "coords");
        check(H5Dwrite(cds.get(), H5T_NATIVE_INT32, H5S_ALL, H5S_ALL, H5P_DEFAULT, fm.coords.data()), path, "coords");

        write_string_attr(file.get(), "extractor", fm.extractor_id, path);
        write_scalar_attr(file.get(), "tile_px", H5T_NATIVE_INT, H5T_STD_I32LE, fm.tile_px, path);
        write_scalar_attr(file.get(), "target_mpp", H5T_NATIVE_DOUBLE, H5T_IEEE_F64LE, fm.target_mpp, path);
        write_string_attr(file.get(), "norm", fm.norm, path);
        check(H5Fflush(file.get(), H5F_SCOPE_GLOBAL), path, "flush");
    }
    if (int fd = ::open(tmp.c_str(), O_RDONLY); fd >= 0) {
        ::fsync(fd);
        ::close(fd);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot move feature file into place: " + ec.message(), path.string());
}

FeatureMatrix read_feature_file(const std::filesystem::path& path)
{
    return read_impl(path, true);
}

FeatureMatrix read_feature_header(const std::filesystem::path& path)
{
    return read_impl(path, false);
}

} // namespace stamp::features
