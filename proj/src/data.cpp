#include "fedl2t/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>

#include "fedl2t/error.hpp"

namespace fedl2t {

SampleBatch SampleBatch::subset(std::span<const std::size_t> rows) const {
    SampleBatch out;
    out.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
    out.y.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.x.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
        out.y[i] = y[rows[i]];
    }
    return out;
}

namespace {

void shuffle(std::vector<std::size_t>& v, RngStream& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

Eigen::VectorXd random_unit(std::size_t d, RngStream& rng) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(d));
    do {
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
    } while (v.norm() == 0.0);
    return v.normalized();
}

// Product of Givens rotations over a random pairing of the coordinates,
// each by an angle uniform in [-pi h, pi h].
Eigen::MatrixXd client_rotation(std::size_t d, double heterogeneity, RngStream& rng) {
    const auto n = static_cast<Eigen::Index>(d);
    Eigen::MatrixXd rot = Eigen::MatrixXd::Identity(n, n);
    std::vector<std::size_t> axes(d);
    std::iota(axes.begin(), axes.end(), 0);
    shuffle(axes, rng);
    for (std::size_t p = 0; p + 1 < d; p += 2) {
        const double angle = rng.uniform(-1.0, 1.0) * std::numbers::pi * heterogeneity;
        const auto i = static_cast<Eigen::Index>(axes[p]);
        const auto j = static_cast<Eigen::Index>(axes[p + 1]);
        Eigen::MatrixXd g = Eigen::MatrixXd::Identity(n, n);
        g(i, i) = std::cos(angle);
        g(j, j) = std::cos(angle);
        g(i, j) = -std::sin(angle);
        g(j, i) = std::sin(angle);
        rot = g * rot;
    }
    return rot;
}

void zscore(ClientData& c) {
    Matrix& tr = c.train.x;
    const Eigen::RowVectorXd mean = tr.colwise().mean();
    Eigen::RowVectorXd sd(tr.cols());
    for (Eigen::Index j = 0; j < tr.cols(); ++j) {
        const double var = (tr.col(j).array() - mean(j)).square().mean();
        sd(j) = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    for (Matrix* m : {&c.train.x, &c.test.x}) {
        m->rowwise() -= mean;
        m->array().rowwise() /= sd.array();
    }
}

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace

void DataConfig::validate() const {
    if (clients < 2) throw ConfigError("need at least 2 clients", "clients");
    if (samples_per_client < 8) throw ConfigError("need at least 8 samples per client", "samples_per_client");
    if (dim < 2) throw ConfigError("need at least 2 features", "dim");
    if (!(heterogeneity >= 0.0 && heterogeneity <= 1.0)) throw ConfigError("must lie in [0, 1]", "heterogeneity");
    if (!(class_sep > 0.0) || !std::isfinite(class_sep)) throw ConfigError("must be > 0", "class_sep");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("must lie in (0, 1)", "test_fraction");
    if (!(label_ratio > 0.0 && label_ratio <= 1.0)) throw ConfigError("must lie in (0, 1]", "label_ratio");
}

std::vector<ClientData> generate(const DataConfig& config) {
    config.validate();
    const std::size_t d = config.dim;
    RngStream shared(config.seed, "data/shared");
    const Eigen::VectorXd direction = random_unit(d, shared);

    std::vector<ClientData> out(config.clients);
    for (std::size_t k = 0; k < config.clients; ++k) {
        RngStream rng(config.seed, "data/client", k);
        const Eigen::MatrixXd rot = client_rotation(d, config.heterogeneity, rng);
        const Eigen::VectorXd shift = random_unit(d, rng) * (config.heterogeneity * config.class_sep);
        const Eigen::VectorXd axis = rot * direction;
        const Eigen::VectorXd means[2] = {shift - 0.5 * config.class_sep * axis, shift + 0.5 * config.class_sep * axis};

        const std::size_t n = config.samples_per_client;
        const std::size_t per_class[2] = {n - n / 2, n / 2};
        std::vector<std::size_t> train_rows;
        std::vector<std::size_t> test_rows;
        SampleBatch all;
        all.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
        all.y.resize(n);
        std::size_t row = 0;
        for (int c = 0; c < 2; ++c) {
            std::vector<std::size_t> rows;
            for (std::size_t i = 0; i < per_class[c]; ++i, ++row) {
                for (std::size_t j = 0; j < d; ++j) {
                    all.x(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j)) =
                        means[c](static_cast<Eigen::Index>(j)) + rng.normal();
                }
                all.y[row] = c;
                rows.push_back(row);
            }
            // Stratified split keeps both classes in both splits.
            auto n_test = static_cast<std::size_t>(std::llround(config.test_fraction * static_cast<double>(rows.size())));
            n_test = std::clamp<std::size_t>(n_test, 1, rows.size() - 1);
            test_rows.insert(test_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_test));
            train_rows.insert(train_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_test), rows.end());
        }
        shuffle(train_rows, rng);
        shuffle(test_rows, rng);
        out[k].train = all.subset(train_rows);
        out[k].test = all.subset(test_rows);
        zscore(out[k]);
    }
    return out;
}

SampleBatch subsample_labels(const SampleBatch& train, double ratio, RngStream& rng) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("must lie in (0, 1]", "label_ratio");
    const std::size_t n = train.size();
    if (ratio == 1.0 || n == 0) return train;

    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < n; ++i) {
        if (train.y[i] != 0 && train.y[i] != 1) throw InvalidInput("subsample_labels: label outside {0,1}");
        by_class[train.y[i]].push_back(i);
    }
    const std::size_t classes_present = (by_class[0].empty() ? 0 : 1) + (by_class[1].empty() ? 0 : 1);
    // The small slack absorbs products such as 0.1 * 300 = 30.000000000000004.
    std::size_t keep = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
    keep = std::clamp(keep, classes_present, n);

    std::size_t take[2] = {0, 0};
    if (classes_present == 2) {
        take[0] = static_cast<std::size_t>(std::floor(static_cast<double>(keep * by_class[0].size()) / static_cast<double>(n) + 0.5));
        take[0] = std::clamp<std::size_t>(take[0], 1, keep - 1);
        take[0] = std::min(take[0], by_class[0].size());
        take[1] = keep - take[0];
        if (take[1] > by_class[1].size()) {
            take[1] = by_class[1].size();
            take[0] = keep - take[1];
        }
    } else {
        take[by_class[0].empty() ? 1 : 0] = keep;
    }

    std::vector<std::size_t> kept;
    for (int c = 0; c < 2; ++c) {
        auto rows = by_class[c];
        shuffle(rows, rng);
        kept.insert(kept.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take[c]));
    }
    std::sort(kept.begin(), kept.end());
    return train.subset(kept);
}

void apply_label_ratio(std::vector<ClientData>& clients, double ratio, std::uint64_t seed) {
    if (ratio == 1.0) return;
    for (std::size_t k = 0; k < clients.size(); ++k) {
        RngStream rng(seed, "data/labels", k);
        clients[k].train = subsample_labels(clients[k].train, ratio, rng);
    }
}

double accuracy(const ModelParams& model, const SampleBatch& test) {
    if (test.empty()) throw ContractViolation("accuracy: empty test set");
    const ForwardTrace t = forward(model, test.x);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const int pred = t.probs(r, 1) > t.probs(r, 0) ? 1 : 0;
        if (pred == test.y[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

void export_dataset(const std::filesystem::path& path, const std::vector<ClientData>& clients) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write dataset: " + path.string());
    const std::size_t d = clients.empty() ? 0 : clients.front().train.dim();
    os << d << ',' << clients.size() << '\n';
    for (std::size_t k = 0; k < clients.size(); ++k) {
        const std::pair<const char*, const SampleBatch*> splits[] = {{"train", &clients[k].train},
                                                                       {"test", &clients[k].test}};
        for (const auto& [name, batch] : splits) {
            for (std::size_t i = 0; i < batch->size(); ++i) {
                os << (k + 1) << ',' << name << ',' << batch->y[i];
                for (Eigen::Index j = 0; j < batch->x.cols(); ++j) {
                    os << ',' << format_double(batch->x(static_cast<Eigen::Index>(i), j));
                }
                os << '\n';
            }
        }
    }
    if (!os) throw IoError("failed while writing dataset: " + path.string());
}

std::vector<ClientData> import_dataset(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read dataset: " + path.string());
    auto fail = [&](std::size_t line, const std::string& why) {
        return IoError(path.string() + ":" + std::to_string(line) + ": " + why);
    };
    std::string line;
    std::size_t d = 0;
    std::size_t k_total = 0;
    if (!std::getline(is, line) || std::sscanf(line.c_str(), "%zu,%zu", &d, &k_total) != 2 || d == 0) {
        throw fail(1, "expected header <d>,<K>");
    }
    std::vector<std::vector<double>> xs[2];
    std::vector<std::vector<int>> ys[2];
    for (auto& v : xs) v.resize(k_total);
    for (auto& v : ys) v.resize(k_total);

    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != d + 3) throw fail(lineno, "expected " + std::to_string(d + 3) + " columns");
        std::size_t client = 0;
        int y = -1;
        auto parse_num = [&](const std::string& s, auto& out) {
            const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
            if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw fail(lineno, "bad number '" + s + "'");
        };
        parse_num(cells[0], client);
        if (client < 1 || client > k_total) throw fail(lineno, "client id out of range");
        int split = cells[1] == "train" ? 0 : cells[1] == "test" ? 1 : -1;
        if (split < 0) throw fail(lineno, "split must be train or test");
        parse_num(cells[2], y);
        if (y != 0 && y != 1) throw fail(lineno, "label outside {0,1}");
        ys[split][client - 1].push_back(y);
        for (std::size_t j = 0; j < d; ++j) {
            double v = 0.0;
            parse_num(cells[3 + j], v);
            xs[split][client - 1].push_back(v);
        }
    }

    std::vector<ClientData> out(k_total);
    for (std::size_t k = 0; k < k_total; ++k) {
        for (int s = 0; s < 2; ++s) {
            SampleBatch& b = s == 0 ? out[k].train : out[k].test;
            b.y = ys[s][k];
            b.x.resize(static_cast<Eigen::Index>(b.y.size()), static_cast<Eigen::Index>(d));
            std::copy(xs[s][k].begin(), xs[s][k].end(), b.x.data());
        }
    }
    return out;
}

}  // namespace fedl2t
