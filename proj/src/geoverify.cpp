#include "fgraph/geoverify.hpp"

#include "fgraph/augment.hpp"
#include "fgraph/parallel.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace fgraph::gv {

namespace {

// Translation + isotropic scale taking the points to centroid 0, mean norm sqrt(2).
Eigen::Matrix3d hartley(const std::vector<Eigen::Vector2d>& pts, const char* which) {
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    for (const auto& x : pts) c += x;
    c /= static_cast<double>(pts.size());
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    double mean_norm = 0;
    for (const auto& x : pts) {
        const Eigen::Vector2d d = x - c;
        cov += d * d.transpose();
        mean_norm += d.norm();
    }
    mean_norm /= static_cast<double>(pts.size());
    const Eigen::Vector2d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(cov).eigenvalues();
    if (!(ev(1) > 0) || ev(0) <= 1e-12 * ev(1))
        throw RankDeficiencyError(std::string("collinear or coincident points in the ") + which + " image");
    const double s = std::sqrt(2.0) / mean_norm;
    Eigen::Matrix3d T;
    T << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
    return T;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

std::vector<bool> classify(const Eigen::Matrix3d& F, std::span<const Correspondence> corrs, const MlesacOptions& opt,
                           double& score) {
    std::vector<bool> in(corrs.size());
    score = 0;
    const double inv = 1.0 / (opt.sigma * opt.sigma);
    for (std::size_t i = 0; i < corrs.size(); ++i) {
        const double r = sampson_sq(F, corrs[i]) * inv;
        in[i] = r < opt.penalty;
        score += std::min(r, opt.penalty);
    }
    return in;
}

}  // namespace

Eigen::Matrix3d eight_point(std::span<const Correspondence> corrs) {
    if (corrs.size() < 8) throw std::invalid_argument("eight_point needs at least 8 correspondences");
    std::vector<Eigen::Vector2d> p, q;
    p.reserve(corrs.size());
    q.reserve(corrs.size());
    for (const auto& c : corrs) {
        if (c.p.z() != 1.0 || c.q.z() != 1.0) throw std::invalid_argument("correspondence not in homogeneous form");
        p.emplace_back(c.p.x(), c.p.y());
        q.emplace_back(c.q.x(), c.q.y());
    }
    const Eigen::Matrix3d Tp = hartley(p, "query"), Tq = hartley(q, "candidate");

    Eigen::MatrixXd A(corrs.size(), 9);
    for (std::size_t i = 0; i < corrs.size(); ++i) {
        const Eigen::Vector3d a = Tp * corrs[i].p, b = Tq * corrs[i].q;
        A.row(static_cast<Eigen::Index>(i)) << b.x() * a.x(), b.x() * a.y(), b.x(), b.y() * a.x(), b.y() * a.y(),
            b.y(), a.x(), a.y(), 1.0;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> full(A, Eigen::ComputeFullV);
    const Eigen::VectorXd f = full.matrixV().col(8);
    Eigen::Matrix3d Fn;
    Fn << f(0), f(1), f(2), f(3), f(4), f(5), f(6), f(7), f(8);

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(Fn, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d sv = svd.singularValues();
    sv(2) = 0;
    Fn = svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();

    Eigen::Matrix3d F = Tq.transpose() * Fn * Tp;
    const double n = F.norm();
    if (!(n > 0)) throw RankDeficiencyError("zero fundamental matrix");
    F /= n;
    return F;
}

double sampson_sq(const Eigen::Matrix3d& F, const Correspondence& c) {
    const Eigen::Vector3d Fp = F * c.p, Ftq = F.transpose() * c.q;
    const double e = c.q.dot(Fp);
    const double den = Fp.x() * Fp.x() + Fp.y() * Fp.y() + Ftq.x() * Ftq.x() + Ftq.y() * Ftq.y();
    if (den <= 0) return e == 0 ? 0.0 : std::numeric_limits<double>::infinity();
    return e * e / den;
}

VerificationResult mlesac(std::span<const Correspondence> corrs, const MlesacOptions& opt, nn::Rng& rng) {
    if (corrs.size() < 8) throw std::invalid_argument("mlesac needs at least 8 correspondences");
    VerificationResult best;
    bool found = false;
    std::vector<std::size_t> pool(corrs.size());
    std::vector<Correspondence> sample(8);
    std::size_t degenerate = 0;
    for (int it = 0; it < opt.iterations; ++it) {
        std::iota(pool.begin(), pool.end(), 0);
        // Partial Fisher-Yates for 8 distinct indices.
        for (std::size_t k = 0; k < 8; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
            std::swap(pool[k], pool[pick(rng)]);
            sample[k] = corrs[pool[k]];
        }
        Eigen::Matrix3d F;
        try {
            F = eight_point(sample);
        } catch (const RankDeficiencyError&) {
            ++degenerate;
            continue;
        }
        double score = 0;
        auto in = classify(F, corrs, opt, score);
        if (!found || score < best.score) {
            best.F = F;
            best.score = score;
            best.inliers = std::move(in);
            found = true;
        }
    }
    if (!found) {
        best.inliers.assign(corrs.size(), false);
        best.diagnostic = "no model found: all " + std::to_string(degenerate) + " samples degenerate";
        return best;
    }
    std::vector<Correspondence> inl;
    for (std::size_t i = 0; i < corrs.size(); ++i)
        if (best.inliers[i]) inl.push_back(corrs[i]);
    if (inl.size() >= 8) {
        try {
            const auto F = eight_point(inl);
            double score = 0;
            auto in = classify(F, corrs, opt, score);
            if (score <= best.score) {
                best.F = F;
                best.score = score;
                best.inliers = std::move(in);
            }
        } catch (const RankDeficiencyError&) {
            // keep the sampled model
        }
    }
    best.n_inliers = static_cast<std::size_t>(std::count(best.inliers.begin(), best.inliers.end(), true));
    const auto need = std::max(opt.min_inliers,
                               static_cast<std::size_t>(std::ceil(opt.min_fraction * static_cast<double>(corrs.size()))));
    best.pass = best.n_inliers >= need;
    if (!best.pass)
        best.diagnostic = std::to_string(best.n_inliers) + " inliers, " + std::to_string(need) + " required";
    return best;
}

std::optional<std::size_t> attribute(const eval::CodedItem& query, std::span<const eval::CodedItem* const> shortlist,
                                     const CorrespondenceSource& source, const MlesacOptions& opt,
                                     std::uint64_t seed) {
    for (std::size_t k = 0; k < shortlist.size(); ++k) {
        const auto corrs = source(query, *shortlist[k]);
        if (corrs.size() < 8) continue;
        nn::Rng rng(nn::derive_seed(seed, {k}));
        if (mlesac(corrs, opt, rng).pass) return k;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------

SyntheticCorrespondences::SyntheticCorrespondences(const std::string& root, const synth::DatasetIndex& index,
                                                   std::span<const eval::CodedItem> queries, std::size_t keypoints,
                                                   std::uint64_t seed)
    : keypoints_(keypoints), seed_(seed), canvas_w_(index.config.scene.canvas), canvas_h_(index.config.scene.canvas) {
    std::map<std::string, const eval::CodedItem*> wanted;
    for (const auto& q : queries) wanted[q.name] = &q;

    struct Job {
        std::string name;
        const synth::VariantEntry* entry;
        int identity;
        int manip;  // -1 for benign
    };
    std::vector<Job> jobs;
    std::vector<int> ids;
    for (const auto& e : index.identities) {
        bool any = false;
        for (std::size_t m = 0; m < e.manipulated.size(); ++m)
            if (wanted.count(e.manipulated[m].image)) {
                jobs.push_back({e.manipulated[m].image, &e.manipulated[m], e.id, static_cast<int>(m)});
                any = true;
            }
        for (const auto& b : e.benign)
            if (wanted.count(b.image)) {
                jobs.push_back({b.image, &b, e.id, -1});
                any = true;
            }
        if (any) ids.push_back(e.id);
    }
    std::vector<synth::IdentityScenes> scenes(ids.size());
    parallel_for(ids.size(), [&](std::size_t i) { scenes[i] = synth::identity_scenes(index.config, ids[i]); });
    std::vector<Image> orig(ids.size());
    parallel_for(ids.size(), [&](std::size_t i) { orig[i] = synth::render(scenes[i].original).image; });

    std::vector<QueryInfo> infos(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t j) {
        const auto& job = jobs[j];
        const std::size_t k = static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), job.identity) - ids.begin());
        QueryInfo& qi = infos[j];
        qi.identity = job.identity;
        qi.clean = job.manip < 0 ? orig[k] : synth::render(scenes[k].manipulated[static_cast<std::size_t>(job.manip)].scene).image;
        qi.to_canvas = aug::invert(job.entry->transform);
        const auto v = synth::load_variant(root, *job.entry);
        qi.width = v.image.width;
        qi.height = v.image.height;
        const auto gray = to_gray(v.image);
        qi.weights.assign(gray.size(), 0.0);
        const int w = qi.width, h = qi.height;
        for (int y = 1; y + 1 < h; ++y)
            for (int x = 1; x + 1 < w; ++x) {
                const auto [sx, sy] = aug::apply(qi.to_canvas, x + 0.5, y + 0.5);
                if (sx < 0 || sy < 0 || sx >= canvas_w_ || sy >= canvas_h_) continue;
                const auto at = [&](int xx, int yy) { return gray[static_cast<std::size_t>(yy) * w + xx]; };
                const double gx = at(x + 1, y) - at(x - 1, y), gy = at(x, y + 1) - at(x, y - 1);
                // Small floor so flat regions can still be sampled.
                qi.weights[static_cast<std::size_t>(y) * w + x] = std::hypot(gx, gy) + 1e-3;
            }
    });
    for (std::size_t j = 0; j < jobs.size(); ++j) queries_.emplace(jobs[j].name, std::move(infos[j]));
    for (std::size_t i = 0; i < ids.size(); ++i) originals_.emplace(ids[i], std::move(orig[i]));
}

std::vector<Correspondence> SyntheticCorrespondences::operator()(const eval::CodedItem& query,
                                                                 const eval::CodedItem& candidate) const {
    const auto it = queries_.find(query.name);
    if (it == queries_.end()) throw std::invalid_argument("no synthetic data for query " + query.name);
    const QueryInfo& qi = it->second;
    nn::Rng rng(nn::derive_seed(seed_, {fnv1a(query.name), fnv1a(candidate.name)}));

    const Image* cand = nullptr;
    if (candidate.role == idx::Role::original && candidate.identity == qi.identity) {
        const auto o = originals_.find(qi.identity);
        if (o != originals_.end()) cand = &o->second;
    }
    std::discrete_distribution<std::size_t> pick(qi.weights.begin(), qi.weights.end());
    std::uniform_real_distribution<double> ux(0.0, canvas_w_), uy(0.0, canvas_h_);
    std::vector<char> used(qi.weights.size(), 0);
    std::vector<Correspondence> out;
    for (std::size_t tries = 0; out.size() < keypoints_ && tries < keypoints_ * 20; ++tries) {
        const auto i = pick(rng);
        if (used[i]) continue;
        used[i] = 1;
        const int x = static_cast<int>(i % static_cast<std::size_t>(qi.width)),
                  y = static_cast<int>(i / static_cast<std::size_t>(qi.width));
        const double px = x + 0.5, py = y + 0.5;
        const auto [sx, sy] = aug::apply(qi.to_canvas, px, py);
        bool match = false;
        if (cand) {
            const int cx = std::clamp(static_cast<int>(std::floor(sx)), 0, canvas_w_ - 1),
                      cy = std::clamp(static_cast<int>(std::floor(sy)), 0, canvas_h_ - 1);
            match = true;
            for (int c = 0; c < 3; ++c)
                if (std::abs(qi.clean.at(cx, cy, c) - cand->at(cx, cy, c)) > 1e-6f) match = false;
        }
        if (match)
            out.push_back(make_corr(px, py, sx, sy));
        else
            out.push_back(make_corr(px, py, ux(rng), uy(rng)));
    }
    return out;
}

// ---------------------------------------------------------------------------

AttributionReport attribution_rates(const eval::BenchInputs& in, const CorrespondenceSource& source,
                                    const AttributionOptions& opt) {
    if (in.benign.empty() || in.manipulated.empty())
        throw std::invalid_argument("attribution needs benign and manipulated queries");
    if (opt.shortlist < 1) throw std::invalid_argument("shortlist must be at least 1");
    std::vector<const eval::CodedItem*> items;
    for (const auto* group : {&in.originals, &in.distractors})
        for (const auto& it : *group) items.push_back(&it);
    std::vector<const eval::CodedItem*> ordered;
    for (auto i : eval::database_order(items.size(), opt.seed)) ordered.push_back(items[i]);
    std::vector<idx::HashRecord> recs;
    for (std::size_t i = 0; i < ordered.size(); ++i) recs.push_back({i, ordered[i]->code, ordered[i]->role});
    const auto db = idx::HashDatabase::build(std::move(recs));

    std::vector<const eval::CodedItem*> queries;
    for (const auto& q : in.benign) queries.push_back(&q);
    for (const auto& q : in.manipulated) queries.push_back(&q);

    AttributionReport rep;
    rep.rows.resize(queries.size());
    parallel_for(queries.size(), [&](std::size_t qi) {
        const auto& q = *queries[qi];
        std::vector<const eval::CodedItem*> shortlist;
        for (const auto& h : db.query(q.code, std::min(opt.shortlist, db.size()))) shortlist.push_back(ordered[h.position]);
        auto own = [&](const eval::CodedItem* c) { return c->role == idx::Role::original && c->identity == q.identity; };
        AttributionRow& row = rep.rows[qi];
        row.query_id = q.name;
        row.role = q.role;
        row.top1 = shortlist.front()->name;
        row.own_original_top1 = own(shortlist.front());
        const auto k = attribute(q, shortlist, source, opt.mlesac, nn::derive_seed(opt.seed, {fnv1a(q.name)}));
        if (k) {
            row.attributed = shortlist[*k]->name;
            row.own_original_attributed = own(shortlist[*k]);
        }
    });
    double fp = 0, fn = 0, fp1 = 0, fn1 = 0;
    for (const auto& r : rep.rows) {
        if (r.role == idx::Role::manipulated) {
            ++rep.n_manipulated;
            fp += r.own_original_attributed;
            fp1 += r.own_original_top1;
        } else {
            ++rep.n_benign;
            fn += !r.own_original_attributed;
            fn1 += !r.own_original_top1;
        }
    }
    rep.fpr = fp / static_cast<double>(rep.n_manipulated);
    rep.fnr = fn / static_cast<double>(rep.n_benign);
    rep.fpr_top1 = fp1 / static_cast<double>(rep.n_manipulated);
    rep.fnr_top1 = fn1 / static_cast<double>(rep.n_benign);
    return rep;
}

AttributionReport evaluate_attribution(const std::string& root, const synth::DatasetIndex& index,
                                       const eval::BenchInputs& in, const AttributionOptions& opt) {
    std::vector<eval::CodedItem> queries = in.benign;
    queries.insert(queries.end(), in.manipulated.begin(), in.manipulated.end());
    const SyntheticCorrespondences src(root, index, queries, opt.keypoints, opt.seed);
    return attribution_rates(in, std::cref(src), opt);
}

void write_attribution_report(const std::string& path, const AttributionReport& r) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "query_id,role,top1,attributed,own_top1,own_attributed\n";
    for (const auto& row : r.rows)
        os << row.query_id << ',' << idx::role_name(row.role) << ',' << row.top1 << ',' << row.attributed << ','
           << int(row.own_original_top1) << ',' << int(row.own_original_attributed) << '\n';
    char buf[256];
    std::snprintf(buf, sizeof buf, "#AGG,FPR=%.6f,FNR=%.6f,FPR_top1=%.6f,FNR_top1=%.6f,n_benign=%zu,n_manipulated=%zu\n",
                  r.fpr, r.fnr, r.fpr_top1, r.fnr_top1, r.n_benign, r.n_manipulated);
    os << buf;
}

std::vector<CorrespondenceSet> read_correspondences(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path);
    const auto j = nlohmann::json::parse(is);
    std::vector<CorrespondenceSet> out;
    for (const auto& e : j) {
        CorrespondenceSet s;
        s.query = e.at("query").get<std::string>();
        s.candidate = e.at("candidate").get<std::string>();
        for (const auto& row : e.at("rows")) {
            const auto v = row.get<std::vector<double>>();
            if (v.size() != 4) throw std::invalid_argument("correspondence rows need 4 numbers");
            s.corrs.push_back(make_corr(v[0], v[1], v[2], v[3]));
        }
        out.push_back(std::move(s));
    }
    return out;
}

void write_correspondences(const std::string& path, std::span<const CorrespondenceSet> sets) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : sets) {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& c : s.corrs) rows.push_back({c.p.x(), c.p.y(), c.q.x(), c.q.y()});
        j.push_back({{"query", s.query}, {"candidate", s.candidate}, {"rows", std::move(rows)}});
    }
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << j.dump(1) << '\n';
}

}  // namespace fgraph::gv
