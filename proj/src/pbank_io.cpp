#include "protolab/pbank_io.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace protolab {

namespace {

constexpr std::array<char, 8> kPbankMagic = {'P', 'B', 'A', 'N', 'K', 0, 0, 1};
constexpr std::array<char, 8> kModelMagic = {'P', 'L', 'M', 'O', 'D', 'E', 'L', 1};

void put_u32(std::ostream& out, std::uint32_t v) {
    const std::array<unsigned char, 4> bytes = {
        static_cast<unsigned char>(v & 0xff),
        static_cast<unsigned char>((v >> 8) & 0xff),
        static_cast<unsigned char>((v >> 16) & 0xff),
        static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(bytes.data()), 4);
}

std::uint32_t get_u32(std::istream& in) {
    std::array<unsigned char, 4> bytes{};
    in.read(reinterpret_cast<char*>(bytes.data()), 4);
    if (!in) throw FormatError("unexpected end of file while reading u32");
    return static_cast<std::uint32_t>(bytes[0]) |
           (static_cast<std::uint32_t>(bytes[1]) << 8) |
           (static_cast<std::uint32_t>(bytes[2]) << 16) |
           (static_cast<std::uint32_t>(bytes[3]) << 24);
}

void put_f32(std::ostream& out, float v) {
    static_assert(sizeof(float) == 4);
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

float get_f32(std::istream& in) {
    const std::uint32_t bits = get_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void put_f64(std::ostream& out, double v) {
    static_assert(sizeof(double) == 8);
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u32(out, static_cast<std::uint32_t>(bits & 0xffffffffu));
    put_u32(out, static_cast<std::uint32_t>(bits >> 32));
}

double get_f64(std::istream& in) {
    const std::uint64_t lo = get_u32(in);
    const std::uint64_t hi = get_u32(in);
    const std::uint64_t bits = lo | (hi << 32);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void put_matrix(std::ostream& out, const Matrix& m) {
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) put_f64(out, m(i, j));
    }
}

Matrix get_matrix(std::istream& in) {
    const std::uint32_t rows = get_u32(in);
    const std::uint32_t cols = get_u32(in);
    Matrix m(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i) {
        for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = get_f64(in);
    }
    return m;
}

void put_vector(std::ostream& out, const Vector& v) {
    put_u32(out, static_cast<std::uint32_t>(v.size()));
    for (Index i = 0; i < v.size(); ++i) put_f64(out, v(i));
}

Vector get_vector(std::istream& in) {
    const std::uint32_t n = get_u32(in);
    Vector v(n);
    for (std::uint32_t i = 0; i < n; ++i) v(i) = get_f64(in);
    return v;
}

void rename_over(const std::filesystem::path& tmp, const std::filesystem::path& path) {
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename " + tmp.string() + " -> " + path.string() + ": " +
                          ec.message());
}

}  // namespace

void write_pbank(const std::filesystem::path& path, const Matrix& raw_weights) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(kPbankMagic.data(), kPbankMagic.size());
        put_u32(out, static_cast<std::uint32_t>(raw_weights.rows()));
        put_u32(out, static_cast<std::uint32_t>(raw_weights.cols()));
        for (Index k = 0; k < raw_weights.rows(); ++k) {
            for (Index d = 0; d < raw_weights.cols(); ++d) {
                put_f32(out, static_cast<float>(raw_weights(k, d)));
            }
        }
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    rename_over(tmp, path);
}

Matrix read_pbank(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kPbankMagic) {
        throw FormatError(path.string() + ": bad .pbank magic");
    }
    const std::uint32_t k = get_u32(in);
    const std::uint32_t d = get_u32(in);
    if (k < 1 || d < 2 || k > (1u << 24) || d > (1u << 16)) {
        throw FormatError(path.string() + ": implausible shape " + std::to_string(k) +
                          "x" + std::to_string(d));
    }
    Matrix m(k, d);
    for (std::uint32_t i = 0; i < k; ++i) {
        for (std::uint32_t j = 0; j < d; ++j) {
            m(i, j) = static_cast<double>(get_f32(in));
        }
    }
    if (!in) throw FormatError(path.string() + ": truncated payload");
    return m;
}

void write_model(const std::filesystem::path& path, const ModelCheckpoint& model) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(kModelMagic.data(), kModelMagic.size());
        put_u32(out, model.encoder.kind == EncoderKind::Linear ? 0 : 1);
        put_matrix(out, model.encoder.w1);
        put_vector(out, model.encoder.b1);
        put_matrix(out, model.encoder.w2);
        put_vector(out, model.encoder.b2);
        put_u32(out, model.bank.mode == HeadMode::Plain ? 0 : 1);
        put_f64(out, model.bank.kappa_scale);
        put_f64(out, model.bank.student_temp);
        put_f64(out, model.bank.teacher_temp);
        put_matrix(out, model.bank.raw_weights);
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    rename_over(tmp, path);
}

ModelCheckpoint read_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kModelMagic) {
        throw FormatError(path.string() + ": bad model magic");
    }
    ModelCheckpoint model;
    model.encoder.kind = get_u32(in) == 0 ? EncoderKind::Linear : EncoderKind::Mlp;
    model.encoder.w1 = get_matrix(in);
    model.encoder.b1 = get_vector(in);
    model.encoder.w2 = get_matrix(in);
    model.encoder.b2 = get_vector(in);
    model.bank.mode = get_u32(in) == 0 ? HeadMode::Plain : HeadMode::VmfNormalized;
    model.bank.kappa_scale = get_f64(in);
    model.bank.student_temp = get_f64(in);
    model.bank.teacher_temp = get_f64(in);
    model.bank.raw_weights = get_matrix(in);
    if (!in) throw FormatError(path.string() + ": truncated payload");
    return model;
}

void atomic_write_text(const std::filesystem::path& path, const std::string& text) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out << text;
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    rename_over(tmp, path);
}

}  // namespace protolab
