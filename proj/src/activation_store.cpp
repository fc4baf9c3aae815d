#include "objdino/activation_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>

#include <json.hpp>

namespace objdino {

namespace {

constexpr std::size_t kHeaderFields = 9;
constexpr std::size_t kHeaderBytes = sizeof(kDumpMagic) + kHeaderFields * 4;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

std::array<std::uint32_t, kHeaderFields> header_fields(const DumpHeader& h) {
    return {h.layers, h.heads, h.patches, h.head_dim, h.grid_h, h.grid_w,
            h.patch_size, h.image_h, h.image_w};
}

}  // namespace

std::string to_string(HeadId id) {
    return std::to_string(id.layer) + "," + std::to_string(id.head);
}

void validate(const DumpHeader& h) {
    for (std::uint32_t v : header_fields(h)) {
        if (v == 0) throw DumpError(DumpError::Kind::invalid_header, "header count must be >= 1");
    }
    if (std::uint64_t(h.grid_h) * h.grid_w != h.patches)
        throw DumpError(DumpError::Kind::inconsistent_grid, "inconsistent grid");
    if (std::uint64_t(h.grid_h) * h.patch_size != h.image_h ||
        std::uint64_t(h.grid_w) * h.patch_size != h.image_w)
        throw DumpError(DumpError::Kind::inconsistent_grid, "inconsistent grid");
}

ActivationDump::ActivationDump(const DumpHeader& header) : header_(header) {
    validate(header_);
    tensors_.assign(3 * head_count(), Matrix(header_.patches, header_.head_dim));
}

ActivationDump::ActivationDump(const DumpHeader& header, std::vector<Matrix> tensors)
    : header_(header), tensors_(std::move(tensors)) {
    validate(header_);
    if (tensors_.size() != 3 * head_count())
        throw DumpError(DumpError::Kind::invalid_header, "expected 3*L*H tensors");
    for (const auto& t : tensors_) {
        if (t.rows() != header_.patches || t.cols() != header_.head_dim)
            throw DumpError(DumpError::Kind::invalid_header, "tensor shape does not match header");
    }
}

std::size_t ActivationDump::index(HeadId id, Component r) const {
    if (!contains(id)) throw std::out_of_range("head " + to_string(id) + " outside dump");
    return (std::size_t(id.layer) * header_.heads + id.head) * 3 + std::size_t(r);
}

std::vector<HeadId> ActivationDump::head_ids() const {
    std::vector<HeadId> ids;
    ids.reserve(head_count());
    for (std::uint32_t l = 0; l < header_.layers; ++l)
        for (std::uint32_t h = 0; h < header_.heads; ++h) ids.push_back({l, h});
    return ids;
}

void write_dump(const ActivationDump& dump, const std::filesystem::path& path) {
    validate(dump.header());
    std::vector<unsigned char> bytes(std::begin(kDumpMagic), std::end(kDumpMagic));
    for (std::uint32_t v : header_fields(dump.header())) put_u32(bytes, v);
    const auto& h = dump.header();
    bytes.reserve(kHeaderBytes + dump.tensors().size() * std::size_t(h.patches) * h.head_dim * 4);
    for (const auto& t : dump.tensors())
        for (float v : t.data()) put_u32(bytes, std::bit_cast<std::uint32_t>(v));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DumpError(DumpError::Kind::io, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw DumpError(DumpError::Kind::io, "write failed: " + path.string());
}

ActivationDump read_dump(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DumpError(DumpError::Kind::io, "cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});

    if (bytes.size() < sizeof(kDumpMagic))
        throw DumpError(DumpError::Kind::truncated, "truncated file");
    if (std::memcmp(bytes.data(), kDumpMagic, sizeof(kDumpMagic)) != 0)
        throw DumpError(DumpError::Kind::bad_magic, "bad magic");
    if (bytes.size() < kHeaderBytes) throw DumpError(DumpError::Kind::truncated, "truncated file");

    std::array<std::uint32_t, kHeaderFields> f{};
    for (std::size_t i = 0; i < kHeaderFields; ++i) f[i] = get_u32(bytes.data() + 8 + 4 * i);
    const DumpHeader header{f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]};
    validate(header);

    const std::uint64_t per_tensor = std::uint64_t(header.patches) * header.head_dim;
    const std::uint64_t count = 3ull * header.layers * header.heads;
    const std::uint64_t expected = kHeaderBytes + count * per_tensor * 4;
    if (bytes.size() < expected) throw DumpError(DumpError::Kind::truncated, "truncated file");
    if (bytes.size() > expected)
        throw DumpError(DumpError::Kind::trailing_bytes, "unexpected trailing bytes");

    std::vector<Matrix> tensors;
    tensors.reserve(count);
    const unsigned char* p = bytes.data() + kHeaderBytes;
    for (std::uint64_t t = 0; t < count; ++t) {
        std::vector<float> data(per_tensor);
        for (auto& v : data) {
            v = std::bit_cast<float>(get_u32(p));
            p += 4;
        }
        tensors.emplace_back(header.patches, header.head_dim, std::move(data));
    }
    return ActivationDump(header, std::move(tensors));
}

void write_ground_truth(const PlantedGroundTruth& gt, const std::filesystem::path& path) {
    nlohmann::json j;
    const auto& b = gt.object_box_patches;
    j["object_box_patches"] = {b.row_min, b.col_min, b.row_max, b.col_max};
    j["planted_heads"] = nlohmann::json::array();
    for (const auto& id : gt.planted_heads) j["planted_heads"].push_back({id.layer, id.head});
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << j.dump() << "\n";
}

PlantedGroundTruth read_ground_truth(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    const auto j = nlohmann::json::parse(in);
    const auto box = j.at("object_box_patches").get<std::vector<std::uint32_t>>();
    if (box.size() != 4) throw std::runtime_error("object_box_patches must have 4 entries");
    PlantedGroundTruth gt;
    gt.object_box_patches = {box[0], box[1], box[2], box[3]};
    for (const auto& pair : j.at("planted_heads")) {
        const auto lh = pair.get<std::vector<std::uint32_t>>();
        if (lh.size() != 2) throw std::runtime_error("planted head must be [layer, head]");
        gt.planted_heads.push_back({lh[0], lh[1]});
    }
    return gt;
}

std::filesystem::path ground_truth_path(const std::filesystem::path& dump_path) {
    auto p = dump_path;
    p.replace_filename(dump_path.stem().string() + ".gt.json");
    return p;
}

namespace {

constexpr double kCheckTau = 60.0;

// Gaussian rows around `center` for every patch index in `members`.
void fill_rows(Matrix& m, const std::vector<std::size_t>& members, const std::vector<double>& center,
               double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> noise(0.0, sigma);
    for (std::size_t i : members) {
        auto row = m.row(i);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] = float(center[c] + noise(rng));
    }
}

// `count` mutually orthogonal random directions of length `radius` (Gram-Schmidt).
std::vector<std::vector<double>> random_centers(std::size_t count, std::size_t dim, double radius,
                                                std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::vector<double>> centers;
    while (centers.size() < count) {
        std::vector<double> v(dim);
        for (auto& x : v) x = gauss(rng);
        for (const auto& c : centers) {
            double proj = 0.0;
            for (std::size_t i = 0; i < dim; ++i) proj += v[i] * c[i];
            proj /= radius * radius;
            for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * c[i];
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-9) continue;
        for (auto& x : v) x *= radius / norm;
        centers.push_back(std::move(v));
    }
    return centers;
}

// Mean Eq.-1 ensemble similarity (uniform weights) over object x object entries, computed on
// the object rows only.
double within_object_similarity(const ActivationDump& dump, HeadId id,
                                const std::vector<std::size_t>& object) {
    double total = 0.0;
    for (Component r : kComponents) {
        const Matrix all = l2_normalize_rows(dump.tensor(id, r));
        Matrix obj(object.size(), all.cols());
        for (std::size_t i = 0; i < object.size(); ++i)
            std::copy(all.row(object[i]).begin(), all.row(object[i]).end(), obj.row(i).begin());
        const Matrix sim = row_softmax(matmul_transpose(obj, all), kCheckTau);
        for (std::size_t i = 0; i < object.size(); ++i)
            for (std::size_t j : object) total += sim(i, j);
    }
    return total / (3.0 * double(object.size() * object.size()));
}

}  // namespace

std::size_t behaviour_group_count(const SyntheticConfig& config) {
    std::size_t structured = config.planted_heads.size();
    for (const auto& g : config.distractor_groups) structured += g.size();
    const std::size_t total = std::size_t(config.layers) * config.heads;
    return 1 + config.distractor_groups.size() + (structured < total ? 1 : 0);
}

SyntheticImage generate_synthetic(const SyntheticConfig& cfg) {
    if (cfg.layers == 0 || cfg.heads == 0 || cfg.grid == 0 || cfg.head_dim == 0 || cfg.patch_size == 0)
        throw std::invalid_argument("synthetic dimensions must be >= 1");
    const auto& box = cfg.object_box;
    if (box.row_min > box.row_max || box.col_min > box.col_max)
        throw std::invalid_argument("degenerate object box");
    if (box.row_max >= cfg.grid || box.col_max >= cfg.grid)
        throw std::invalid_argument("object box outside grid");
    if (cfg.planted_heads.empty()) throw std::invalid_argument("planted heads must be nonempty");
    if (!(cfg.noise_sigma >= 0.0) || !std::isfinite(cfg.noise_sigma))
        throw std::invalid_argument("noise sigma must be finite and >= 0");

    DumpHeader header{cfg.layers, cfg.heads, cfg.grid * cfg.grid, cfg.head_dim, cfg.grid, cfg.grid,
                      cfg.patch_size, cfg.grid * cfg.patch_size, cfg.grid * cfg.patch_size};
    ActivationDump dump(header);

    // Role of every head: -2 isotropic, -1 planted, g >= 0 distractor group g.
    std::vector<int> role(dump.head_count(), -2);
    auto mark = [&](HeadId id, int value) {
        if (!dump.contains(id)) throw std::invalid_argument("head " + to_string(id) + " outside dump");
        auto& slot = role[std::size_t(id.layer) * cfg.heads + id.head];
        if (slot != -2) throw std::invalid_argument("head " + to_string(id) + " assigned twice");
        slot = value;
    };
    for (const auto& id : cfg.planted_heads) mark(id, -1);
    for (std::size_t g = 0; g < cfg.distractor_groups.size(); ++g)
        for (const auto& id : cfg.distractor_groups[g]) mark(id, int(g));

    const std::size_t n = header.patches;
    std::vector<std::size_t> object, background;
    for (std::uint32_t r = 0; r < cfg.grid; ++r)
        for (std::uint32_t c = 0; c < cfg.grid; ++c)
            (box.contains(r, c) ? object : background).push_back(std::size_t(r) * cfg.grid + c);

    auto band_members = [&](std::size_t group) {
        const std::size_t bands = std::min<std::size_t>(2 + group / 2, cfg.grid);
        std::vector<std::vector<std::size_t>> members(bands);
        for (std::uint32_t r = 0; r < cfg.grid; ++r)
            for (std::uint32_t c = 0; c < cfg.grid; ++c) {
                const std::size_t coord = (group % 2 == 0) ? r : c;
                members[coord * bands / cfg.grid].push_back(std::size_t(r) * cfg.grid + c);
            }
        return members;
    };

    // Orthogonal centers of this radius sit at least 6 sigma apart.
    const double radius = std::max(1.0, 6.0 * cfg.noise_sigma / std::sqrt(2.0));
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::size_t> everything(n);
    for (std::size_t i = 0; i < n; ++i) everything[i] = i;

    for (const HeadId id : dump.head_ids()) {
        const int kind = role[std::size_t(id.layer) * cfg.heads + id.head];
        for (Component r : kComponents) {
            Matrix& m = dump.tensor(id, r);
            if (kind == -2) {
                fill_rows(m, everything, std::vector<double>(cfg.head_dim, 0.0), 1.0, rng);
                continue;
            }
            std::vector<std::vector<std::size_t>> parts;
            if (kind == -1) {
                parts = {object, background};
                if (background.empty()) parts.pop_back();
            } else {
                parts = band_members(std::size_t(kind));
            }
            if (parts.size() > cfg.head_dim)
                throw std::invalid_argument("head_dim too small for the requested partition");
            const auto centers = random_centers(parts.size(), cfg.head_dim, radius, rng);
            for (std::size_t p = 0; p < parts.size(); ++p)
                fill_rows(m, parts[p], centers[p], cfg.noise_sigma, rng);
        }
    }

    double weakest_planted = std::numeric_limits<double>::infinity();
    double strongest_other = -std::numeric_limits<double>::infinity();
    for (const HeadId id : dump.head_ids()) {
        const double s = within_object_similarity(dump, id, object);
        if (role[std::size_t(id.layer) * cfg.heads + id.head] == -1)
            weakest_planted = std::min(weakest_planted, s);
        else
            strongest_other = std::max(strongest_other, s);
    }
    if (!(weakest_planted > strongest_other))
        throw std::runtime_error("planted heads do not dominate within-object similarity; "
                                 "lower noise_sigma or shrink the object box");

    PlantedGroundTruth truth{box, cfg.planted_heads};
    std::sort(truth.planted_heads.begin(), truth.planted_heads.end());
    return {std::move(dump), std::move(truth)};
}

}  // namespace objdino
