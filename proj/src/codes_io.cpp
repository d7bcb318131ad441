#include "usae/codes_io.hpp"

namespace usae {

void put_codes(io::ByteWriter& w, const CodeBatch<float>& codes) {
    w.put(static_cast<std::uint64_t>(codes.rows()));
    w.put(static_cast<std::uint32_t>(codes.m));
    for (Eigen::Index i = 0; i < codes.rows(); ++i) {
        const auto row = codes.row(i);
        w.put(static_cast<std::uint32_t>(row.size()));
        for (const auto& e : row) {
            w.put(e.index);
            w.put(e.value);
        }
    }
}

CodeBatch<float> get_codes(io::ByteReader& r) {
    CodeBatch<float> codes;
    const auto n = r.get<std::uint64_t>("code rows");
    codes.m = r.get<std::uint32_t>("code width");
    if (n > r.remaining() / sizeof(std::uint32_t)) throw FormatError("truncated code batch", r.offset());
    codes.offsets.reserve(static_cast<std::size_t>(n) + 1);
    for (std::uint64_t i = 0; i < n; ++i) {
        const auto count = r.get<std::uint32_t>("row length");
        if (count > codes.m) throw FormatError("code row longer than code width", r.offset());
        std::uint32_t prev = 0;
        for (std::uint32_t c = 0; c < count; ++c) {
            const auto at = r.offset();
            const auto idx = r.get<std::uint32_t>("code index");
            const auto val = r.get<float>("code value");
            if (idx >= codes.m || (c > 0 && idx <= prev)) throw FormatError("code indices not increasing or out of range", at);
            if (!(val > 0.0f) || !std::isfinite(val)) throw DataError("code value must be finite and positive");
            codes.entries.push_back({idx, val});
            prev = idx;
        }
        codes.offsets.push_back(codes.entries.size());
    }
    return codes;
}

void write_codes(const CodeBatch<float>& codes, const std::string& model_id, const std::filesystem::path& path) {
    io::ByteWriter w;
    w.put_magic("USCB");
    w.put(std::uint16_t{1});
    w.put_string(model_id);
    put_codes(w, codes);
    w.save(path);
}

CodeBatch<float> read_codes(const std::filesystem::path& path, std::string* model_id) {
    io::ByteReader r = io::ByteReader::load(path);
    try {
        r.expect_magic("USCB");
        const auto at = r.offset();
        if (r.get<std::uint16_t>("version") != 1) throw FormatError("unsupported code batch version", at);
        std::string id = r.get_string("model_id");
        if (model_id) *model_id = id;
        CodeBatch<float> codes = get_codes(r);
        r.expect_end();
        return codes;
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

}  // namespace usae
