#include "divbnn/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace divbnn {

namespace {
constexpr scalar_t kPi = 3.14159265358979323846;
}

Tensor Dataset::features() const {
    if (x.empty()) throw std::invalid_argument("Dataset::features: empty dataset");
    size_t dim = x.front().size();
    std::vector<scalar_t> flat;
    flat.reserve(x.size() * dim);
    for (const auto& row : x) flat.insert(flat.end(), row.begin(), row.end());
    return Tensor::from({x.size(), dim}, std::move(flat));
}

Dataset two_moons(size_t n, scalar_t noise, Rng& rng) {
    Dataset d;
    d.num_classes = 2;
    for (size_t i = 0; i < n; ++i) {
        int label = static_cast<int>(i % 2);
        scalar_t t = rng.uniform() * kPi;
        scalar_t px, py;
        if (label == 0) {
            px = std::cos(t);
            py = std::sin(t);
        } else {
            px = 1.0 - std::cos(t);
            py = 0.5 - std::sin(t);
        }
        px += noise * rng.normal();
        py += noise * rng.normal();
        d.x.push_back({px, py});
        d.y.push_back(label);
    }
    return d;
}

Dataset spirals(size_t n, size_t classes, scalar_t noise, Rng& rng) {
    if (classes < 2) throw std::invalid_argument("spirals: need at least 2 classes");
    Dataset d;
    d.num_classes = classes;
    for (size_t i = 0; i < n; ++i) {
        int label = static_cast<int>(i % classes);
        scalar_t t = rng.uniform();                       // position along the arm
        scalar_t radius = 0.2 + 0.8 * t;
        scalar_t angle = 3.0 * kPi * t + 2.0 * kPi * label / classes;
        scalar_t px = radius * std::cos(angle) + noise * rng.normal();
        scalar_t py = radius * std::sin(angle) + noise * rng.normal();
        d.x.push_back({px, py});
        d.y.push_back(label);
    }
    return d;
}

Dataset load_csv_vectors(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("csv_vectors: cannot open " + path);
    Dataset d;
    std::string line;
    size_t line_no = 0;
    size_t dim = 0;
    int max_label = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<scalar_t> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                size_t used = 0;
                scalar_t v = std::stod(cell, &used);
                while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used])))
                    ++used;
                if (used != cell.size()) throw std::invalid_argument("trailing chars");
                cells.push_back(v);
            } catch (const std::exception&) {
                throw std::runtime_error("csv_vectors: non-numeric cell '" + cell + "' at line " +
                                         std::to_string(line_no));
            }
        }
        if (cells.size() < 2)
            throw std::runtime_error("csv_vectors: need features plus label at line " +
                                     std::to_string(line_no));
        if (dim == 0) dim = cells.size();
        if (cells.size() != dim)
            throw std::runtime_error("csv_vectors: column count mismatch at line " +
                                     std::to_string(line_no));
        int label = static_cast<int>(std::llround(cells.back()));
        if (label < 0)
            throw std::runtime_error("csv_vectors: negative label at line " +
                                     std::to_string(line_no));
        cells.pop_back();
        d.x.push_back(std::move(cells));
        d.y.push_back(label);
        max_label = std::max(max_label, label);
    }
    if (d.x.empty()) throw std::runtime_error("csv_vectors: no rows in " + path);
    d.num_classes = static_cast<size_t>(max_label) + 1;
    return d;
}

namespace {

uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("idx_images: truncated header in " + path);
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

} // namespace

Dataset load_idx_images(const std::string& images_path, const std::string& labels_path,
                        size_t subset_size) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("idx_images: cannot open " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("idx_images: cannot open " + labels_path);

    if (read_be32(img, images_path) != 0x00000803)
        throw std::runtime_error("idx_images: bad magic in " + images_path);
    uint32_t n = read_be32(img, images_path);
    uint32_t rows = read_be32(img, images_path);
    uint32_t cols = read_be32(img, images_path);
    if (read_be32(lab, labels_path) != 0x00000801)
        throw std::runtime_error("idx_images: bad magic in " + labels_path);
    uint32_t nl = read_be32(lab, labels_path);
    if (nl != n) throw std::runtime_error("idx_images: image/label count mismatch");

    size_t take = subset_size == 0 ? n : std::min<size_t>(subset_size, n);
    Dataset d;
    int max_label = 0;
    std::vector<unsigned char> pix(rows * cols);
    for (size_t i = 0; i < take; ++i) {
        if (!img.read(reinterpret_cast<char*>(pix.data()), pix.size()))
            throw std::runtime_error("idx_images: truncated pixels in " + images_path);
        char c;
        if (!lab.read(&c, 1)) throw std::runtime_error("idx_images: truncated labels");
        std::vector<scalar_t> row(pix.size());
        for (size_t j = 0; j < pix.size(); ++j) row[j] = pix[j] / 255.0;
        d.x.push_back(std::move(row));
        d.y.push_back(static_cast<unsigned char>(c));
        max_label = std::max(max_label, d.y.back());
    }
    d.num_classes = static_cast<size_t>(max_label) + 1;
    return d;
}

void write_csv_vectors(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_csv_vectors: cannot open " + path);
    out.precision(17);
    for (size_t i = 0; i < data.size(); ++i) {
        for (scalar_t v : data.x[i]) out << v << ",";
        out << data.y[i] << "\n";
    }
}

SplitData make_dataset(const DatasetSpec& spec, uint64_t seed) {
    Rng rng = Rng(seed).fork(11);
    Dataset full;
    if (spec.kind == "two_moons") {
        full = two_moons(spec.n, spec.noise, rng);
    } else if (spec.kind == "spirals") {
        full = spirals(spec.n, spec.classes, spec.noise, rng);
    } else if (spec.kind == "csv_vectors") {
        full = load_csv_vectors(spec.path);
    } else if (spec.kind == "idx_images") {
        full = load_idx_images(spec.images_path, spec.labels_path, spec.subset_size);
    } else {
        throw std::invalid_argument("make_dataset: unknown kind '" + spec.kind + "'");
    }

    // deterministic shuffle then split
    Rng split_rng = Rng(seed).fork(13);
    std::vector<size_t> order(full.size());
    std::iota(order.begin(), order.end(), 0);
    for (size_t i = order.size() - 1; i > 0; --i)
        std::swap(order[i], order[split_rng.next_u64() % (i + 1)]);

    size_t val_n = static_cast<size_t>(std::floor(spec.val_fraction * full.size()));
    if (full.size() - val_n == 0) throw std::invalid_argument("make_dataset: empty train split");

    SplitData split;
    split.train.num_classes = split.val.num_classes = full.num_classes;
    for (size_t k = 0; k < order.size(); ++k) {
        Dataset& dst = k < val_n ? split.val : split.train;
        dst.x.push_back(full.x[order[k]]);
        dst.y.push_back(full.y[order[k]]);
    }

    // corrupt train labels only; validation stays clean for honest scoring
    if (spec.label_noise > 0.0) {
        Rng noise_rng = Rng(seed).fork(12);
        for (auto& label : split.train.y)
            if (noise_rng.uniform() < spec.label_noise)
                label = static_cast<int>(noise_rng.next_u64() % full.num_classes);
    }

    // standardize with train statistics only
    size_t dim = split.train.x.front().size();
    std::vector<scalar_t> mean(dim, 0.0), stdev(dim, 0.0);
    for (const auto& row : split.train.x)
        for (size_t j = 0; j < dim; ++j) mean[j] += row[j];
    for (auto& m : mean) m /= split.train.size();
    for (const auto& row : split.train.x)
        for (size_t j = 0; j < dim; ++j) {
            scalar_t d = row[j] - mean[j];
            stdev[j] += d * d;
        }
    for (auto& s : stdev) s = std::sqrt(s / split.train.size());
    for (auto& s : stdev)
        if (s == 0.0) s = 1.0;
    for (Dataset* d : {&split.train, &split.val})
        for (auto& row : d->x)
            for (size_t j = 0; j < dim; ++j) row[j] = (row[j] - mean[j]) / stdev[j];
    return split;
}

} // namespace divbnn
