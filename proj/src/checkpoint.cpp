#include "edpose/checkpoint.hpp"

#include "edpose/errors.hpp"

#include <cstring>
#include <fstream>

namespace edpose {
namespace {

constexpr char kMagic[8] = {'E', 'D', 'P', 'O', 'S', 'E', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_i64(std::ostream& out, std::int64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_string(std::ostream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_mat(std::ostream& out, const Mat& m) {
    write_u64(out, static_cast<std::uint64_t>(m.rows()));
    write_u64(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
}

std::uint64_t read_u64(std::istream& in, const std::string& what) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw ParseError("truncated checkpoint while reading " + what);
    return v;
}

std::int64_t read_i64(std::istream& in, const std::string& what) {
    std::int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw ParseError("truncated checkpoint while reading " + what);
    return v;
}

std::string read_string(std::istream& in, const std::string& what) {
    auto n = read_u64(in, what + " length");
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw ParseError("truncated checkpoint while reading " + what);
    return s;
}

Mat read_mat(std::istream& in, const std::string& what) {
    auto rows = read_u64(in, what + " rows");
    auto cols = read_u64(in, what + " cols");
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * rows * cols));
    if (!in) throw ParseError("truncated checkpoint while reading " + what);
    return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path);

    out.write(kMagic, sizeof(kMagic));
    std::uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));

    write_string(out, serialize_run_config(ck.config));
    write_i64(out, ck.epoch);
    write_i64(out, ck.step);
    write_i64(out, ck.optimizer_steps);
    write_string(out, ck.rng_state);

    write_u64(out, ck.params.size());
    for (const auto& [name, blob] : ck.params) {
        write_string(out, name);
        write_mat(out, blob.value);
        write_mat(out, blob.moment1);
        write_mat(out, blob.moment2);
    }
    if (!out) throw IoError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ParseError("not a checkpoint file: " + path);
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != kVersion)
        throw ParseError("unsupported checkpoint version in " + path);

    Checkpoint ck;
    ck.config = parse_run_config(read_string(in, "config"));
    ck.epoch = read_i64(in, "epoch");
    ck.step = read_i64(in, "step");
    ck.optimizer_steps = read_i64(in, "optimizer steps");
    ck.rng_state = read_string(in, "rng state");

    auto n = read_u64(in, "parameter count");
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string name = read_string(in, "parameter name");
        Checkpoint::ParamBlob blob;
        blob.value = read_mat(in, name + " value");
        blob.moment1 = read_mat(in, name + " moment1");
        blob.moment2 = read_mat(in, name + " moment2");
        ck.params.emplace(std::move(name), std::move(blob));
    }
    return ck;
}

void capture_parameters(Checkpoint& ck, std::vector<nn::Parameter*> params) {
    ck.params.clear();
    for (auto* p : params) {
        Checkpoint::ParamBlob blob;
        blob.value = p->value();
        blob.moment1 = p->moment1();
        blob.moment2 = p->moment2();
        ck.params.emplace(p->name(), std::move(blob));
    }
}

void restore_parameters(const Checkpoint& ck, std::vector<nn::Parameter*> params) {
    if (ck.params.size() != params.size())
        throw SchemaError("checkpoint holds " + std::to_string(ck.params.size()) +
                          " parameters, model has " + std::to_string(params.size()));
    for (auto* p : params) {
        auto it = ck.params.find(p->name());
        if (it == ck.params.end())
            throw SchemaError("checkpoint is missing parameter " + p->name());
        const auto& blob = it->second;
        if (blob.value.rows() != p->value().rows() || blob.value.cols() != p->value().cols())
            throw SchemaError("checkpoint shape mismatch for " + p->name());
        p->value() = blob.value;
        p->moment1() = blob.moment1;
        p->moment2() = blob.moment2;
    }
}

}  // namespace edpose
