#include <cstring>
#include <fstream>

#include "nflab/model.hpp"

namespace nflab {

namespace {

constexpr char kMagic[] = "normformer-lab checkpoint v1";

void write_f64_le(std::ostream& os, const double* p, int64_t n) {
    // Serialize explicitly as little-endian IEEE-754 bytes.
    for (int64_t i = 0; i < n; ++i) {
        uint64_t bits;
        std::memcpy(&bits, &p[i], 8);
        char buf[8];
        for (int b = 0; b < 8; ++b) buf[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
        os.write(buf, 8);
    }
}

void read_f64_le(std::istream& is, double* p, int64_t n) {
    for (int64_t i = 0; i < n; ++i) {
        char buf[8];
        is.read(buf, 8);
        uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) {
            bits |= static_cast<uint64_t>(static_cast<unsigned char>(buf[b])) << (8 * b);
        }
        std::memcpy(&p[i], &bits, 8);
    }
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& config_kv,
                     ModelParams& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    os << kMagic << "\n";
    os << "config " << config_kv.size() << "\n";
    for (const auto& [k, v] : config_kv) os << k << " = " << v << "\n";
    auto refs = collect_params(params);
    os << "tensors " << refs.size() << "\n";
    for (const auto& r : refs) {
        os << "tensor " << qualified_param_name(r) << " " << r.tensor->rank();
        for (int i = 0; i < r.tensor->rank(); ++i) os << " " << r.tensor->dim(i);
        os << "\n";
        write_f64_le(os, r.tensor->data(), r.tensor->numel());
    }
    if (!os) throw IoError("checkpoint: write to '" + path + "' failed");
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
    std::string line;
    std::getline(is, line);
    if (line != kMagic) throw IoError("checkpoint: '" + path + "' has unknown format");

    Checkpoint ck;
    std::string word;
    size_t n_config = 0;
    is >> word >> n_config;
    std::getline(is, line);
    if (word != "config") throw IoError("checkpoint: missing config section");
    for (size_t i = 0; i < n_config; ++i) {
        std::getline(is, line);
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) throw IoError("checkpoint: bad config line '" + line + "'");
        ck.config_kv.emplace_back(line.substr(0, eq), line.substr(eq + 3));
    }
    size_t n_tensors = 0;
    is >> word >> n_tensors;
    if (word != "tensors") throw IoError("checkpoint: missing tensors section");
    for (size_t i = 0; i < n_tensors; ++i) {
        std::string name;
        int rank = 0;
        is >> word >> name >> rank;
        if (word != "tensor" || rank < 0 || rank > 8) {
            throw IoError("checkpoint: bad tensor header in '" + path + "'");
        }
        std::vector<int> shape(static_cast<size_t>(rank));
        for (auto& d : shape) is >> d;
        std::getline(is, line);  // consume end of header line
        Tensor t(shape);
        read_f64_le(is, t.data(), t.numel());
        if (!is) throw IoError("checkpoint: truncated tensor data in '" + path + "'");
        ck.tensors.emplace_back(name, std::move(t));
    }
    return ck;
}

void load_checkpoint_params(const Checkpoint& ck, ModelParams& params) {
    auto refs = collect_params(params);
    for (auto& r : refs) {
        const std::string name = qualified_param_name(r);
        bool found = false;
        for (const auto& [n, t] : ck.tensors) {
            if (n == name) {
                check_same_shape("load_checkpoint", name.c_str(), t, *r.tensor);
                *r.tensor = t;
                found = true;
                break;
            }
        }
        if (!found) throw IoError("checkpoint: missing tensor '" + name + "'");
    }
}

}  // namespace nflab
