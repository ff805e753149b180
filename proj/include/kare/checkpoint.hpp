#pragma once

#include "kare/config.hpp"
#include "kare/lexicon.hpp"
#include "kare/model.hpp"
#include "kare/text.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace kare {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'K', 'A', 'R', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainingMetadata {
    std::uint64_t seed = 0;
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    double best_dev_f1 = 0.0;
    std::uint64_t split_hash = 0;

    std::string to_text() const {
        std::ostringstream out;
        out << "seed = " << seed << "\nepochs_run = " << epochs_run << "\nbest_epoch = " << best_epoch
            << "\nbest_dev_f1 = " << detail::format_real(best_dev_f1) << "\nsplit_hash = " << split_hash << '\n';
        return out.str();
    }

    static TrainingMetadata from_text(const std::string& text) {
        TrainingMetadata m;
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key == "seed") m.seed = std::stoull(value);
            else if (key == "epochs_run") m.epochs_run = std::stoull(value);
            else if (key == "best_epoch") m.best_epoch = std::stoull(value);
            else if (key == "best_dev_f1") m.best_dev_f1 = std::stod(value);
            else if (key == "split_hash") m.split_hash = std::stoull(value);
        }
        return m;
    }
};

/// A trained model with everything needed to predict from raw text.
struct Checkpoint {
    RunConfig config;
    TrainingMetadata meta;
    Lexicon lexicon;
    Model model;
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_text(std::ostream& out, const std::string& s) {
    put_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
public:
    Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

    void bytes(void* dst, std::size_t n) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) throw Error(source_ + ": truncated checkpoint");
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        bytes(&v, 8);
        return v;
    }
    std::string text(std::size_t limit = std::size_t{1} << 32) {
        const auto n = u64();
        if (n > limit) throw Error(source_ + ": corrupt checkpoint (block length " + std::to_string(n) + ")");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }

private:
    std::istream& in_;
    std::string source_;
};

}  // namespace detail

/// Layout (little-endian): "KARE", u32 version, then text blocks (u64 length +
/// bytes) for config, metadata, vocabulary and lexicon, then u32 tensor count
/// and per tensor: name block, u32 rank, u64 dims, f64 data (row-major).
inline void write_checkpoint(std::ostream& out, const RunConfig& config, const TrainingMetadata& meta,
                             const Lexicon& lexicon, const Model& model) {
    out.write(kCheckpointMagic, 4);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_text(out, config.canonical());
    detail::put_text(out, meta.to_text());
    std::string vocab;
    for (const auto& w : model.vocabulary()) vocab += w + '\n';
    detail::put_text(out, vocab);
    detail::put_text(out, lexicon.to_tsv());

    std::vector<std::pair<std::string, const double*>> blobs;
    std::vector<std::vector<std::size_t>> shapes;
    std::vector<Matrix> row_major;
    ModelParams::for_each(
        [&](const std::string& name, const auto& t) {
            if (t.size() == 0) return;
            blobs.emplace_back(name, nullptr);
            shapes.push_back(shape_of(t));
            row_major.push_back(Matrix(t));
        },
        model.params());
    detail::put_u32(out, static_cast<std::uint32_t>(blobs.size()));
    for (std::size_t i = 0; i < blobs.size(); ++i) {
        detail::put_text(out, blobs[i].first);
        detail::put_u32(out, static_cast<std::uint32_t>(shapes[i].size()));
        for (auto d : shapes[i]) detail::put_u64(out, d);
        const Matrix& m = row_major[i];
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                const double v = m(r, c);
                out.write(reinterpret_cast<const char*>(&v), 8);
            }
        }
    }
    if (!out) throw Error("failed writing checkpoint");
}

inline void save_checkpoint(const std::string& path, const RunConfig& config, const TrainingMetadata& meta,
                            const Lexicon& lexicon, const Model& model) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint '" + path + "'");
    write_checkpoint(out, config, meta, lexicon, model);
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    save_checkpoint(path, ck.config, ck.meta, ck.lexicon, ck.model);
}

inline Checkpoint read_checkpoint(std::istream& in, const std::string& source = "<checkpoint>") {
    detail::Reader r(in, source);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw Error(source + ": not a kare checkpoint");
    const auto version = r.u32();
    if (version != kCheckpointVersion) {
        throw Error(source + ": unsupported checkpoint version " + std::to_string(version));
    }
    RunConfig config = RunConfig::from_text(r.text(), source);
    TrainingMetadata meta = TrainingMetadata::from_text(r.text());
    std::vector<std::string> words;
    {
        std::istringstream vin(r.text());
        std::string w;
        while (std::getline(vin, w)) words.push_back(w);
    }
    std::istringstream lin(r.text());
    Lexicon lexicon = Lexicon::parse(lin, source);

    std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<double>>> stored;
    const auto count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.text(4096);
        const auto rank = r.u32();
        if (rank < 1 || rank > 2) throw Error(source + ": tensor '" + name + "' has rank " + std::to_string(rank));
        std::vector<std::size_t> shape(rank);
        std::size_t total = 1;
        for (auto& d : shape) {
            d = r.u64();
            if (d > (std::size_t{1} << 31)) throw Error(source + ": tensor '" + name + "' has an implausible shape");
            total *= d;
        }
        std::vector<double> data(total);
        r.bytes(data.data(), total * 8);
        stored.emplace(std::move(name), std::make_pair(std::move(shape), std::move(data)));
    }

    Model model(ModelConfig::from(config), std::move(words));
    ModelParams::for_each(
        [&](const std::string& name, auto& t) {
            if (t.size() == 0) return;
            auto it = stored.find(name);
            if (it == stored.end()) throw Error(source + ": tensor '" + name + "' missing");
            if (it->second.first != shape_of(t)) throw ShapeError(source + ": tensor '" + name + "' has the wrong shape");
            const auto& data = it->second.second;
            const Eigen::Index cols = t.cols();
            for (Eigen::Index k = 0; k < t.size(); ++k) t(k / cols, k % cols) = data[static_cast<std::size_t>(k)];
            stored.erase(it);
        },
        model.params());
    if (!stored.empty()) throw Error(source + ": unexpected tensor '" + stored.begin()->first + "'");
    return Checkpoint{std::move(config), meta, std::move(lexicon), std::move(model)};
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint '" + path + "'");
    return read_checkpoint(in, path);
}

}  // namespace kare
