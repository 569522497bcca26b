#include "ctxlens/model_io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace ctxlens {

namespace {

constexpr char kMagic[8] = {'C', 'T', 'X', 'L', 'E', 'N', 'S', '1'};
constexpr char kTextMagic[] = "ctxlens-model";

// ---- little-endian primitives ----

void put_bytes(std::ostream& out, const void* p, size_t len) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(len));
}

void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(out, b, 4);
}

void put_u64(std::ostream& out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(out, b, 8);
}

void put_f64(std::ostream& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

void get_bytes(std::istream& in, void* p, size_t len) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(len));
    check_input(static_cast<size_t>(in.gcount()) == len, "model file truncated");
}

uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    get_bytes(in, b, 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    get_bytes(in, b, 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& in) {
    const uint64_t bits = get_u64(in);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

std::string get_name(std::istream& in) {
    const uint32_t len = get_u32(in);
    check_input(len > 0 && len < 4096, "model file: implausible name length");
    std::string name(len, '\0');
    get_bytes(in, name.data(), len);
    return name;
}

// ---- neutral in-memory form shared by both encodings ----

struct RawTensor {
    std::vector<uint64_t> dims;
    std::vector<double> data;
};

struct RawModel {
    std::map<std::string, int64_t> int_fields;
    std::map<std::string, double> real_fields;
    std::map<std::string, RawTensor> tensors;
};

int get_int_field(const RawModel& raw, const std::string& name, int64_t fallback, bool required) {
    auto it = raw.int_fields.find(name);
    if (it == raw.int_fields.end()) {
        check_input(!required, "model file: missing config field " + name);
        return static_cast<int>(fallback);
    }
    return static_cast<int>(it->second);
}

Matrix take_matrix(RawModel& raw, const std::string& name, int rows, int cols) {
    auto it = raw.tensors.find(name);
    check_input(it != raw.tensors.end(), "model file: missing tensor " + name);
    RawTensor& t = it->second;
    check_input(t.dims.size() == 2 && t.dims[0] == static_cast<uint64_t>(rows) &&
                    t.dims[1] == static_cast<uint64_t>(cols),
                "model file: bad shape for tensor " + name);
    Matrix m(rows, cols);
    m.data() = std::move(t.data);
    raw.tensors.erase(it);
    return m;
}

std::vector<double> take_vector(RawModel& raw, const std::string& name, int len) {
    auto it = raw.tensors.find(name);
    check_input(it != raw.tensors.end(), "model file: missing tensor " + name);
    RawTensor& t = it->second;
    check_input(t.dims.size() == 1 && t.dims[0] == static_cast<uint64_t>(len),
                "model file: bad shape for tensor " + name);
    std::vector<double> v = std::move(t.data);
    raw.tensors.erase(it);
    return v;
}

ModelWeights assemble(RawModel&& raw) {
    ModelWeights w;
    w.config.num_layers = get_int_field(raw, "num_layers", 0, true);
    w.config.num_heads = get_int_field(raw, "num_heads", 0, true);
    w.config.d_model = get_int_field(raw, "d_model", 0, true);
    w.config.d_head = get_int_field(raw, "d_head", 0, true);
    w.config.d_ff = get_int_field(raw, "d_ff", 0, true);
    w.config.vocab_size = get_int_field(raw, "vocab_size", 0, true);
    w.config.max_seq_len = get_int_field(raw, "max_seq_len", 0, true);
    w.config.stop_id = get_int_field(raw, "stop_id", -1, false);
    w.config.bos_id = get_int_field(raw, "bos_id", -1, false);
    auto eps = raw.real_fields.find("layernorm_epsilon");
    check_input(eps != raw.real_fields.end(), "model file: missing config field layernorm_epsilon");
    w.config.layernorm_epsilon = eps->second;
    w.config.validate();

    const int d = w.config.d_model;
    w.token_embedding = take_matrix(raw, "token_embedding", w.config.vocab_size, d);
    w.position_embedding = take_matrix(raw, "position_embedding", w.config.max_seq_len, d);
    w.layers.resize(w.config.num_layers);
    for (int l = 0; l < w.config.num_layers; ++l) {
        LayerWeights& lw = w.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        lw.attn_ln_gain = take_vector(raw, p + "attn_ln_gain", d);
        lw.attn_ln_bias = take_vector(raw, p + "attn_ln_bias", d);
        for (int h = 0; h < w.config.num_heads; ++h) {
            const std::string hp = p + "heads." + std::to_string(h) + ".";
            lw.w_query.push_back(take_matrix(raw, hp + "w_query", d, w.config.d_head));
            lw.w_key.push_back(take_matrix(raw, hp + "w_key", d, w.config.d_head));
            lw.w_value.push_back(take_matrix(raw, hp + "w_value", d, w.config.d_head));
        }
        lw.attn_out_proj = take_matrix(raw, p + "attn_out_proj", d, d);
        lw.attn_out_bias = take_vector(raw, p + "attn_out_bias", d);
        lw.mlp_ln_gain = take_vector(raw, p + "mlp_ln_gain", d);
        lw.mlp_ln_bias = take_vector(raw, p + "mlp_ln_bias", d);
        lw.mlp_in = take_matrix(raw, p + "mlp_in", d, w.config.d_ff);
        lw.mlp_in_bias = take_vector(raw, p + "mlp_in_bias", w.config.d_ff);
        lw.mlp_out = take_matrix(raw, p + "mlp_out", w.config.d_ff, d);
        lw.mlp_out_bias = take_vector(raw, p + "mlp_out_bias", d);
    }
    w.final_ln_gain = take_vector(raw, "final_ln_gain", d);
    w.final_ln_bias = take_vector(raw, "final_ln_bias", d);
    w.unembedding = take_matrix(raw, "unembedding", d, w.config.vocab_size);
    if (!raw.tensors.empty())
        throw InputError("model file: unexpected tensor " + raw.tensors.begin()->first);
    w.validate();
    return w;
}

// canonical write-out order: config fields, then tensors as assemble consumes them
struct FieldView {
    std::string name;
    bool is_real;
    int64_t ival;
    double rval;
};

std::vector<FieldView> config_fields(const ModelConfig& c) {
    return {
        {"num_layers", false, c.num_layers, 0}, {"num_heads", false, c.num_heads, 0},
        {"d_model", false, c.d_model, 0},       {"d_head", false, c.d_head, 0},
        {"d_ff", false, c.d_ff, 0},             {"vocab_size", false, c.vocab_size, 0},
        {"max_seq_len", false, c.max_seq_len, 0},
        {"layernorm_epsilon", true, 0, c.layernorm_epsilon},
        {"stop_id", false, c.stop_id, 0},       {"bos_id", false, c.bos_id, 0},
    };
}

struct TensorView {
    std::string name;
    std::vector<uint64_t> dims;
    const double* data;
    size_t count;
};

TensorView view(const std::string& name, const Matrix& m) {
    return {name, {static_cast<uint64_t>(m.rows()), static_cast<uint64_t>(m.cols())}, m.data().data(),
            m.data().size()};
}

TensorView view(const std::string& name, const std::vector<double>& v) {
    return {name, {v.size()}, v.data(), v.size()};
}

std::vector<TensorView> tensor_views(const ModelWeights& w) {
    std::vector<TensorView> out;
    out.push_back(view("token_embedding", w.token_embedding));
    out.push_back(view("position_embedding", w.position_embedding));
    for (size_t l = 0; l < w.layers.size(); ++l) {
        const LayerWeights& lw = w.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        out.push_back(view(p + "attn_ln_gain", lw.attn_ln_gain));
        out.push_back(view(p + "attn_ln_bias", lw.attn_ln_bias));
        for (size_t h = 0; h < lw.w_query.size(); ++h) {
            const std::string hp = p + "heads." + std::to_string(h) + ".";
            out.push_back(view(hp + "w_query", lw.w_query[h]));
            out.push_back(view(hp + "w_key", lw.w_key[h]));
            out.push_back(view(hp + "w_value", lw.w_value[h]));
        }
        out.push_back(view(p + "attn_out_proj", lw.attn_out_proj));
        out.push_back(view(p + "attn_out_bias", lw.attn_out_bias));
        out.push_back(view(p + "mlp_ln_gain", lw.mlp_ln_gain));
        out.push_back(view(p + "mlp_ln_bias", lw.mlp_ln_bias));
        out.push_back(view(p + "mlp_in", lw.mlp_in));
        out.push_back(view(p + "mlp_in_bias", lw.mlp_in_bias));
        out.push_back(view(p + "mlp_out", lw.mlp_out));
        out.push_back(view(p + "mlp_out_bias", lw.mlp_out_bias));
    }
    out.push_back(view("final_ln_gain", w.final_ln_gain));
    out.push_back(view("final_ln_bias", w.final_ln_bias));
    out.push_back(view("unembedding", w.unembedding));
    return out;
}

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

ModelWeights read_model_binary(std::istream& in) {
    char magic[8];
    get_bytes(in, magic, 8);
    check_input(std::memcmp(magic, kMagic, 8) == 0, "model file: bad magic");
    RawModel raw;
    const uint32_t nfields = get_u32(in);
    check_input(nfields <= 1024, "model file: implausible field count");
    for (uint32_t i = 0; i < nfields; ++i) {
        const std::string name = get_name(in);
        unsigned char type;
        get_bytes(in, &type, 1);
        if (type == 0) {
            raw.int_fields[name] = static_cast<int64_t>(get_u64(in));
        } else if (type == 1) {
            raw.real_fields[name] = get_f64(in);
        } else {
            throw InputError("model file: unknown field type for " + name);
        }
    }
    const uint32_t ntensors = get_u32(in);
    check_input(ntensors <= 1u << 20, "model file: implausible tensor count");
    for (uint32_t i = 0; i < ntensors; ++i) {
        const std::string name = get_name(in);
        RawTensor t;
        const uint32_t rank = get_u32(in);
        check_input(rank >= 1 && rank <= 4, "model file: bad rank for tensor " + name);
        uint64_t count = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            const uint64_t dim = get_u64(in);
            check_input(dim >= 1 && dim <= 1u << 28, "model file: bad dimension for tensor " + name);
            t.dims.push_back(dim);
            count *= dim;
        }
        check_input(count <= 1u << 30, "model file: tensor too large: " + name);
        t.data.resize(count);
        for (uint64_t k = 0; k < count; ++k) t.data[k] = get_f64(in);
        check_input(raw.tensors.emplace(name, std::move(t)).second,
                    "model file: duplicate tensor " + name);
    }
    return assemble(std::move(raw));
}

ModelWeights read_model_text(std::istream& in) {
    std::string word;
    check_input(static_cast<bool>(in >> word) && word == kTextMagic, "model file: bad text header");
    std::string version;
    check_input(static_cast<bool>(in >> version) && version == "v1", "model file: unsupported text version");
    RawModel raw;
    while (in >> word) {
        if (word == "field") {
            std::string name, value;
            check_input(static_cast<bool>(in >> name >> value), "model file: malformed field line");
            if (value.find_first_of(".eE") != std::string::npos || name == "layernorm_epsilon") {
                raw.real_fields[name] = std::stod(value);
            } else {
                raw.int_fields[name] = std::stoll(value);
            }
        } else if (word == "tensor") {
            std::string name;
            uint32_t rank = 0;
            check_input(static_cast<bool>(in >> name >> rank), "model file: malformed tensor line");
            check_input(rank >= 1 && rank <= 4, "model file: bad rank for tensor " + name);
            RawTensor t;
            uint64_t count = 1;
            for (uint32_t r = 0; r < rank; ++r) {
                uint64_t dim = 0;
                check_input(static_cast<bool>(in >> dim) && dim >= 1, "model file: bad dimension for " + name);
                t.dims.push_back(dim);
                count *= dim;
            }
            check_input(count <= 1u << 30, "model file: tensor too large: " + name);
            t.data.resize(count);
            for (uint64_t k = 0; k < count; ++k)
                check_input(static_cast<bool>(in >> t.data[k]), "model file: short tensor data for " + name);
            check_input(raw.tensors.emplace(name, std::move(t)).second,
                        "model file: duplicate tensor " + name);
        } else {
            throw InputError("model file: unexpected token '" + word + "'");
        }
    }
    return assemble(std::move(raw));
}

ModelWeights load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check_input(static_cast<bool>(in), "cannot open model file: " + path);
    char magic[8] = {};
    in.read(magic, 8);
    const bool binary = in.gcount() == 8 && std::memcmp(magic, kMagic, 8) == 0;
    in.clear();
    in.seekg(0);
    return binary ? read_model_binary(in) : read_model_text(in);
}

void save_model_binary(const ModelWeights& weights, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    check_input(static_cast<bool>(out), "cannot write model file: " + path);
    put_bytes(out, kMagic, 8);
    const auto fields = config_fields(weights.config);
    put_u32(out, static_cast<uint32_t>(fields.size()));
    for (const auto& f : fields) {
        put_u32(out, static_cast<uint32_t>(f.name.size()));
        put_bytes(out, f.name.data(), f.name.size());
        const unsigned char type = f.is_real ? 1 : 0;
        put_bytes(out, &type, 1);
        if (f.is_real) {
            put_f64(out, f.rval);
        } else {
            put_u64(out, static_cast<uint64_t>(f.ival));
        }
    }
    const auto tensors = tensor_views(weights);
    put_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        put_u32(out, static_cast<uint32_t>(t.name.size()));
        put_bytes(out, t.name.data(), t.name.size());
        put_u32(out, static_cast<uint32_t>(t.dims.size()));
        for (uint64_t d : t.dims) put_u64(out, d);
        for (size_t k = 0; k < t.count; ++k) put_f64(out, t.data[k]);
    }
    check_input(static_cast<bool>(out), "write failure: " + path);
}

void save_model_text(const ModelWeights& weights, const std::string& path) {
    std::ofstream out(path);
    check_input(static_cast<bool>(out), "cannot write model file: " + path);
    out << kTextMagic << " v1\n";
    for (const auto& f : config_fields(weights.config)) {
        out << "field " << f.name << ' ';
        if (f.is_real) {
            out << format_real(f.rval);
        } else {
            out << f.ival;
        }
        out << '\n';
    }
    for (const auto& t : tensor_views(weights)) {
        out << "tensor " << t.name << ' ' << t.dims.size();
        for (uint64_t d : t.dims) out << ' ' << d;
        out << '\n';
        for (size_t k = 0; k < t.count; ++k) {
            out << format_real(t.data[k]);
            out << (((k + 1) % 8 == 0 || k + 1 == t.count) ? '\n' : ' ');
        }
    }
    check_input(static_cast<bool>(out), "write failure: " + path);
}

} // namespace ctxlens
