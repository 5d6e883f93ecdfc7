#include "sams/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "sams/csv.hpp"
#include "sams/error.hpp"
#include "sams/rng.hpp"

namespace fs = std::filesystem;

namespace sams {

namespace {

bool integer_text(const std::string& s) {
    if (s.empty()) return false;
    std::size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
    if (i == s.size()) return false;
    for (; i < s.size(); ++i)
        if (s[i] < '0' || s[i] > '9') return false;
    return true;
}

std::string coord(const std::string& file, std::size_t row, std::size_t col) {
    return file + ": row " + std::to_string(row + 1) + ", column " + std::to_string(col + 1);
}

// Largest-remainder apportionment of n into the given fractions; determinate
// tie-break by bucket order.
std::vector<std::int64_t> apportion(std::int64_t n, const std::vector<double>& fracs) {
    std::vector<std::int64_t> sizes(fracs.size());
    std::vector<std::pair<double, std::size_t>> rema(fracs.size());
    std::int64_t assigned = 0;
    for (std::size_t i = 0; i < fracs.size(); ++i) {
        const double quota = fracs[i] * static_cast<double>(n);
        sizes[i] = static_cast<std::int64_t>(std::floor(quota));
        assigned += sizes[i];
        rema[i] = {quota - std::floor(quota), i};
    }
    std::stable_sort(rema.begin(), rema.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::int64_t k = 0; k < n - assigned; ++k) ++sizes[rema[static_cast<std::size_t>(k)].second];
    return sizes;
}

}  // namespace

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    throw Error("split_name: bad tag");
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ValidationError("split must be train/val/test, got '" + name + "'");
}

std::vector<std::int64_t> PerturbDataset::rows_in(Split s) const {
    std::vector<std::int64_t> out;
    for (std::size_t i = 0; i < split.size(); ++i)
        if (split[i] == s) out.push_back(static_cast<std::int64_t>(i));
    return out;
}

std::vector<double> PerturbDataset::treated_counts(Split s) const {
    std::vector<double> counts(static_cast<std::size_t>(t()), 0.0);
    const auto& dv = D.values();
    for (std::int64_t i = 0; i < n(); ++i) {
        if (split[static_cast<std::size_t>(i)] != s) continue;
        for (std::int64_t j = 0; j < t(); ++j) counts[j] += dv[i * t() + j];
    }
    return counts;
}

std::int64_t PerturbDataset::perturbation_index(const std::string& name) const {
    for (std::size_t i = 0; i < perturbation_names.size(); ++i)
        if (perturbation_names[i] == name) return static_cast<std::int64_t>(i);
    return -1;
}

void PerturbDataset::validate() const {
    if (X.rows() != D.rows())
        throw ValidationError("X has " + std::to_string(X.rows()) + " rows, D has " +
                              std::to_string(D.rows()));
    if (static_cast<std::int64_t>(split.size()) != n() ||
        static_cast<std::int64_t>(library_sizes.size()) != n())
        throw ValidationError("per-cell metadata length disagrees with X");
    for (double v : D.values())
        if (v != 0.0 && v != 1.0) throw ValidationError("dosage entries must be 0 or 1");
    if (mode == DataMode::counts) {
        for (double v : X.values())
            if (v < 0.0 || v != std::floor(v))
                throw ValidationError("counts must be non-negative integers");
        for (std::size_t i = 0; i < library_sizes.size(); ++i)
            if (!(library_sizes[i] > 0.0))
                throw ValidationError("row " + std::to_string(i + 1) +
                                      " has zero library size");
    }
    if (control_index < -1 || control_index >= t())
        throw ValidationError("control index out of range");
}

PerturbDataset load_dataset(const std::string& dir, const std::string& control_name) {
    const fs::path base(dir);
    for (const char* name : {"X.csv", "D.csv"})
        if (!fs::exists(base / name))
            throw ValidationError("missing " + (base / name).string());

    PerturbDataset ds;
    const std::string xpath = (base / "X.csv").string();
    CsvTable xt = read_csv(xpath);
    ds.gene_names = xt.header;
    const std::int64_t n = xt.nrows(), dx = xt.ncols();
    if (n == 0 || dx == 0) throw ValidationError(xpath + ": empty matrix");

    bool counts = true;
    for (const auto& row : xt.rows)
        for (const auto& f : row)
            if (!integer_text(f)) {
                counts = false;
                break;
            }
    ds.mode = counts ? DataMode::counts : DataMode::reals;

    std::vector<double> xv(static_cast<std::size_t>(n * dx));
    for (std::size_t i = 0; i < xt.rows.size(); ++i)
        for (std::size_t j = 0; j < xt.rows[i].size(); ++j) {
            const double v = parse_double_field(xt.rows[i][j], coord(xpath, i, j));
            if (counts && v < 0)
                throw ValidationError(coord(xpath, i, j) + ": negative count");
            xv[i * static_cast<std::size_t>(dx) + j] = v;
        }
    ds.X = Tensor::from({n, dx}, std::move(xv));

    const std::string dpath = (base / "D.csv").string();
    CsvTable dt = read_csv(dpath);
    ds.perturbation_names = dt.header;
    if (dt.nrows() != n)
        throw ValidationError(dpath + ": " + std::to_string(dt.nrows()) + " rows but X.csv has " +
                              std::to_string(n));
    const std::int64_t t = dt.ncols();
    std::vector<double> dv(static_cast<std::size_t>(n * t));
    for (std::size_t i = 0; i < dt.rows.size(); ++i)
        for (std::size_t j = 0; j < dt.rows[i].size(); ++j) {
            const std::string& f = dt.rows[i][j];
            if (f != "0" && f != "1")
                throw ValidationError(coord(dpath, i, j) + ": dosage must be 0 or 1, got '" + f +
                                      "'");
            dv[i * static_cast<std::size_t>(t) + j] = f == "1" ? 1.0 : 0.0;
        }
    ds.D = Tensor::from({n, t}, std::move(dv));

    // Control designation: CLI override first, then the D.csv metadata line.
    std::string control = control_name;
    if (control.empty() && dt.comment.rfind("control=", 0) == 0)
        control = dt.comment.substr(8);
    if (!control.empty()) {
        ds.control_index = ds.perturbation_index(control);
        if (ds.control_index < 0)
            throw ValidationError("control perturbation '" + control + "' not found in D.csv");
    }

    ds.split.assign(static_cast<std::size_t>(n), Split::train);
    if (fs::exists(base / "obs.csv")) {
        const std::string opath = (base / "obs.csv").string();
        CsvTable ot = read_csv(opath);
        if (ot.nrows() != n)
            throw ValidationError(opath + ": " + std::to_string(ot.nrows()) +
                                  " rows but X.csv has " + std::to_string(n));
        const std::int64_t sc = ot.find_col("split");
        if (sc >= 0)
            for (std::size_t i = 0; i < ot.rows.size(); ++i)
                ds.split[i] = split_from_name(ot.rows[i][static_cast<std::size_t>(sc)]);
    }

    ds.library_sizes.assign(static_cast<std::size_t>(n), 1.0);
    if (ds.mode == DataMode::counts) {
        const auto& x = ds.X.values();
        for (std::int64_t i = 0; i < n; ++i) {
            double l = 0;
            for (std::int64_t j = 0; j < dx; ++j) l += x[i * dx + j];
            if (!(l > 0.0))
                throw ValidationError(xpath + ": row " + std::to_string(i + 1) +
                                      " has all-zero counts");
            ds.library_sizes[static_cast<std::size_t>(i)] = l;
        }
    }

    ds.validate();
    return ds;
}

void save_dataset(const PerturbDataset& ds, const std::string& dir) {
    ds.validate();
    const fs::path base(dir);
    fs::create_directories(base);

    CsvTable xt;
    xt.header = ds.gene_names;
    const auto& x = ds.X.values();
    xt.rows.resize(static_cast<std::size_t>(ds.n()));
    for (std::int64_t i = 0; i < ds.n(); ++i) {
        auto& row = xt.rows[static_cast<std::size_t>(i)];
        row.resize(static_cast<std::size_t>(ds.d_x()));
        for (std::int64_t j = 0; j < ds.d_x(); ++j) {
            const double v = x[i * ds.d_x() + j];
            row[static_cast<std::size_t>(j)] = ds.mode == DataMode::counts
                                                   ? std::to_string(static_cast<std::int64_t>(v))
                                                   : format_double(v);
        }
    }
    write_csv((base / "X.csv").string(), xt);

    CsvTable dt;
    if (ds.control_index >= 0)
        dt.comment = "control=" + ds.perturbation_names[static_cast<std::size_t>(ds.control_index)];
    dt.header = ds.perturbation_names;
    const auto& d = ds.D.values();
    dt.rows.resize(static_cast<std::size_t>(ds.n()));
    for (std::int64_t i = 0; i < ds.n(); ++i) {
        auto& row = dt.rows[static_cast<std::size_t>(i)];
        row.resize(static_cast<std::size_t>(ds.t()));
        for (std::int64_t j = 0; j < ds.t(); ++j)
            row[static_cast<std::size_t>(j)] = d[i * ds.t() + j] == 1.0 ? "1" : "0";
    }
    write_csv((base / "D.csv").string(), dt);

    CsvTable ot;
    ot.header = {"split"};
    ot.rows.resize(static_cast<std::size_t>(ds.n()));
    for (std::int64_t i = 0; i < ds.n(); ++i)
        ot.rows[static_cast<std::size_t>(i)] = {split_name(ds.split[static_cast<std::size_t>(i)])};
    write_csv((base / "obs.csv").string(), ot);
}

NormStats encoder_stats(const PerturbDataset& ds) {
    const auto train = ds.rows_in(Split::train);
    if (train.empty()) throw ValidationError("encoder_stats: train split is empty");
    const std::int64_t dx = ds.d_x();
    NormStats st;
    st.mean.assign(static_cast<std::size_t>(dx), 0.0);
    st.std.assign(static_cast<std::size_t>(dx), 0.0);
    const auto& x = ds.X.values();
    const bool logp = ds.mode == DataMode::counts;
    for (auto i : train)
        for (std::int64_t j = 0; j < dx; ++j) {
            const double v = logp ? std::log1p(x[i * dx + j]) : x[i * dx + j];
            st.mean[static_cast<std::size_t>(j)] += v;
        }
    const double inv = 1.0 / static_cast<double>(train.size());
    for (auto& m : st.mean) m *= inv;
    for (auto i : train)
        for (std::int64_t j = 0; j < dx; ++j) {
            const double v = logp ? std::log1p(x[i * dx + j]) : x[i * dx + j];
            const double c = v - st.mean[static_cast<std::size_t>(j)];
            st.std[static_cast<std::size_t>(j)] += c * c;
        }
    for (auto& s : st.std) s = std::sqrt(s * inv);
    return st;
}

Tensor normalize_for_encoder(const PerturbDataset& ds, const NormStats& stats) {
    if (static_cast<std::int64_t>(stats.mean.size()) != ds.d_x())
        throw ShapeError("normalize_for_encoder: statistics length mismatch");
    const std::int64_t n = ds.n(), dx = ds.d_x();
    const bool logp = ds.mode == DataMode::counts;
    std::vector<double> out(static_cast<std::size_t>(n * dx));
    const auto& x = ds.X.values();
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < dx; ++j) {
            const double v = logp ? std::log1p(x[i * dx + j]) : x[i * dx + j];
            const double sd = std::max(stats.std[static_cast<std::size_t>(j)], 1e-8);
            out[static_cast<std::size_t>(i * dx + j)] =
                (v - stats.mean[static_cast<std::size_t>(j)]) / sd;
        }
    return Tensor::from({n, dx}, std::move(out));
}

double median_train_library(const PerturbDataset& ds) {
    const auto train = ds.rows_in(Split::train);
    if (train.empty()) throw ValidationError("median_train_library: train split is empty");
    std::vector<double> l;
    l.reserve(train.size());
    for (auto i : train) l.push_back(ds.library_sizes[static_cast<std::size_t>(i)]);
    std::sort(l.begin(), l.end());
    const std::size_t m = l.size() / 2;
    return l.size() % 2 ? l[m] : 0.5 * (l[m - 1] + l[m]);
}

Tensor library_normalize(const PerturbDataset& ds) {
    const double target = median_train_library(ds);
    const std::int64_t n = ds.n(), dx = ds.d_x();
    std::vector<double> out(static_cast<std::size_t>(n * dx));
    const auto& x = ds.X.values();
    for (std::int64_t i = 0; i < n; ++i) {
        const double scale = target / ds.library_sizes[static_cast<std::size_t>(i)];
        for (std::int64_t j = 0; j < dx; ++j)
            out[static_cast<std::size_t>(i * dx + j)] = x[i * dx + j] * scale;
    }
    return Tensor::from({n, dx}, std::move(out));
}

void make_splits(PerturbDataset& ds, double train_frac, double val_frac, double test_frac,
                 std::uint64_t seed, bool stratified) {
    const std::vector<double> fracs{train_frac, val_frac, test_frac};
    double total = 0;
    for (double f : fracs) {
        if (f < 0) throw ValidationError("make_splits: fractions must be non-negative");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw ValidationError("make_splits: fractions must sum to 1");

    Rng rng(seed);
    auto assign_group = [&](const std::vector<std::int64_t>& rows) {
        // Seeded shuffle, then largest-remainder block assignment.
        std::vector<std::int64_t> order(rows.size());
        auto perm = rng.permutation(static_cast<std::int64_t>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i)
            order[i] = rows[static_cast<std::size_t>(perm[i])];
        const auto sizes = apportion(static_cast<std::int64_t>(rows.size()), fracs);
        std::size_t pos = 0;
        for (int b = 0; b < 3; ++b)
            for (std::int64_t k = 0; k < sizes[static_cast<std::size_t>(b)]; ++k)
                ds.split[static_cast<std::size_t>(order[pos++])] = static_cast<Split>(b);
    };

    if (!stratified) {
        std::vector<std::int64_t> all(static_cast<std::size_t>(ds.n()));
        for (std::int64_t i = 0; i < ds.n(); ++i) all[static_cast<std::size_t>(i)] = i;
        assign_group(all);
        return;
    }

    // Group rows by dosage pattern, iterated in first-appearance order.
    std::map<std::vector<double>, std::vector<std::int64_t>> groups;
    std::vector<const std::vector<double>*> order;
    const auto& d = ds.D.values();
    for (std::int64_t i = 0; i < ds.n(); ++i) {
        std::vector<double> key(d.begin() + i * ds.t(), d.begin() + (i + 1) * ds.t());
        auto [it, fresh] = groups.try_emplace(std::move(key));
        if (fresh) order.push_back(&it->first);
        it->second.push_back(i);
    }
    for (const auto* key : order) assign_group(groups.at(*key));

    // Every observed perturbation must keep at least one treated train cell.
    const auto counts = ds.treated_counts(Split::train);
    for (std::int64_t j = 0; j < ds.t(); ++j) {
        double any = 0;
        for (std::int64_t i = 0; i < ds.n(); ++i) any += d[i * ds.t() + j];
        if (any > 0 && counts[static_cast<std::size_t>(j)] == 0)
            throw ValidationError("make_splits: perturbation '" +
                                  ds.perturbation_names[static_cast<std::size_t>(j)] +
                                  "' has no train cells under the requested fractions");
    }
}

}  // namespace sams
