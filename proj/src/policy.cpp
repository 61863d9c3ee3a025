// SPDX-License-Identifier: Apache-2.0
#include "beamalign/policy.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "beamalign/rng.hpp"

namespace beamalign {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMajor>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

double logistic(double x)
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

std::uint64_t to_little_endian(std::uint64_t v)
{
    if constexpr (std::endian::native == std::endian::big) {
        std::uint64_t r = 0;
        for (int i = 0; i < 8; ++i) {
            r = (r << 8) | ((v >> (8 * i)) & 0xffU);
        }
        return r;
    }
    return v;
}

}  // namespace

std::uint64_t fnv1a64(std::span<const unsigned char> bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

ScanPolicyNet::ScanPolicyNet(std::size_t n_bins, std::uint64_t seed)
    : n_(n_bins), seed_(seed), params_(parameter_count(n_bins), 0.0)
{
    if (n_bins == 0) {
        throw std::invalid_argument("scan network needs N >= 1");
    }
}

std::size_t ScanPolicyNet::parameter_count(std::size_t n)
{
    return 12 * n * n + 10 * n + 2;
}

std::array<ScanPolicyNet::Block, 6> ScanPolicyNet::blocks() const
{
    const std::size_t n = n_;
    std::array<Block, 6> b{};
    std::size_t off = 0;
    auto push = [&](std::size_t i, std::size_t rows, std::size_t cols) {
        b[i] = Block{off, rows, cols};
        off += rows * cols;
    };
    push(0, 4 * n, n);
    push(1, 4 * n, 1);
    push(2, 2 * n, 4 * n);
    push(3, 2 * n, 1);
    push(4, 2, 2 * n);
    push(5, 2, 1);
    return b;
}

ScanPolicyNet ScanPolicyNet::initialized(std::size_t n_bins, std::uint64_t seed)
{
    ScanPolicyNet net(n_bins, seed);
    Rng rng = Rng::stream(seed, 0x5ca1ab1e);
    const auto b = net.blocks();
    for (std::size_t layer = 0; layer < 3; ++layer) {
        const Block& w = b[2 * layer];
        const double limit = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
        for (std::size_t i = 0; i < w.rows * w.cols; ++i) {
            net.params_[w.offset + i] = rng.uniform(-limit, limit);
        }
    }
    return net;
}

std::array<double, 2> ScanPolicyNet::forward(std::span<const double> probs) const
{
    if (probs.size() != n_) {
        throw std::invalid_argument("scan network built for N=" + std::to_string(n_) + " got a posterior of " +
                                    std::to_string(probs.size()) + " bins");
    }
    const auto b = blocks();
    auto layer = [&](std::size_t i, const Eigen::VectorXd& x) {
        const Block& w = b[2 * i];
        const Block& bias = b[2 * i + 1];
        Eigen::VectorXd out(static_cast<Eigen::Index>(w.rows));
        out.noalias() = ConstMatMap(params_.data() + w.offset, static_cast<Eigen::Index>(w.rows),
                                    static_cast<Eigen::Index>(w.cols)) *
                        x;
        for (Eigen::Index r = 0; r < out.size(); ++r) {
            out[r] += params_[bias.offset + static_cast<std::size_t>(r)];
        }
        return out;
    };
    const ConstVecMap x(probs.data(), static_cast<Eigen::Index>(n_));
    Eigen::VectorXd h1 = layer(0, x).cwiseMax(0.0);
    Eigen::VectorXd h2 = layer(1, h1).cwiseMax(0.0);
    Eigen::VectorXd o = layer(2, h2);
    return {logistic(o[0]), logistic(o[1])};
}

ScanPolicyNet::Bound ScanPolicyNet::bind(ad::Tape& tape, std::span<double> grad_sink) const
{
    if (!grad_sink.empty() && grad_sink.size() != params_.size()) {
        throw std::invalid_argument("gradient sink does not match the parameter count");
    }
    const auto b = blocks();
    auto view = [&](std::size_t i) {
        const Block& blk = b[i];
        const std::span<const double> data(params_.data() + blk.offset, blk.rows * blk.cols);
        const std::span<double> sink =
            grad_sink.empty() ? std::span<double>{} : grad_sink.subspan(blk.offset, blk.rows * blk.cols);
        return tape.parameter(data, sink, blk.rows, blk.cols);
    };
    return Bound{view(0), view(1), view(2), view(3), view(4), view(5)};
}

ad::Value ScanPolicyNet::forward(const Bound& net, const ad::Value& probs)
{
    const ad::Value h1 = ad::relu(ad::dense(net.w1, net.b1, probs));
    const ad::Value h2 = ad::relu(ad::dense(net.w2, net.b2, h1));
    return ad::logistic(ad::dense(net.w3, net.b3, h2));
}

void ScanPolicyNet::write(std::ostream& os) const
{
    os << "SCANNET v1 N=" << n_ << " seed=" << seed_ << '\n';
    os << "dims " << n_ << ' ' << 4 * n_ << ' ' << 2 * n_ << " 2\n";
    std::vector<unsigned char> payload(params_.size() * 8);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(params_[i]));
        std::memcpy(payload.data() + 8 * i, &bits, 8);
    }
    const std::uint64_t digest = to_little_endian(fnv1a64(payload));
    os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    os.write(reinterpret_cast<const char*>(&digest), 8);
    if (!os) {
        throw std::runtime_error("failed to write checkpoint");
    }
}

ScanPolicyNet ScanPolicyNet::read(std::istream& is)
{
    std::string header;
    std::string dims;
    if (!std::getline(is, header) || !std::getline(is, dims)) {
        throw std::runtime_error("checkpoint: truncated header");
    }
    std::size_t n = 0;
    std::uint64_t seed = 0;
    {
        std::istringstream hs(header);
        std::string magic;
        std::string version;
        std::string nfield;
        std::string sfield;
        hs >> magic >> version >> nfield >> sfield;
        if (magic != "SCANNET" || version != "v1" || nfield.rfind("N=", 0) != 0 || sfield.rfind("seed=", 0) != 0) {
            throw std::runtime_error("checkpoint: bad header '" + header + "'");
        }
        n = std::stoul(nfield.substr(2));
        seed = std::stoull(sfield.substr(5));
    }
    {
        std::istringstream ds(dims);
        std::string tag;
        std::size_t d0 = 0;
        std::size_t d1 = 0;
        std::size_t d2 = 0;
        std::size_t d3 = 0;
        ds >> tag >> d0 >> d1 >> d2 >> d3;
        if (tag != "dims" || d0 != n || d1 != 4 * n || d2 != 2 * n || d3 != 2) {
            throw std::runtime_error("checkpoint: layer dimensions do not match N=" + std::to_string(n));
        }
    }
    ScanPolicyNet net(n, seed);
    std::vector<unsigned char> payload(net.params_.size() * 8);
    std::uint64_t digest = 0;
    is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    is.read(reinterpret_cast<char*>(&digest), 8);
    if (!is) {
        throw std::runtime_error("checkpoint: truncated payload");
    }
    if (to_little_endian(digest) != fnv1a64(payload)) {
        throw std::runtime_error("checkpoint: digest mismatch");
    }
    for (std::size_t i = 0; i < net.params_.size(); ++i) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, payload.data() + 8 * i, 8);
        net.params_[i] = std::bit_cast<double>(to_little_endian(bits));
    }
    return net;
}

void ScanPolicyNet::save(const std::filesystem::path& path) const
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    write(os);
}

ScanPolicyNet ScanPolicyNet::load(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open checkpoint " + path.string());
    }
    return read(is);
}

Beam beam_from_outputs(double o1, double o2, std::size_t n_bins)
{
    const double floor = kTwoPi / static_cast<double>(n_bins);
    return Beam{wrap(kTwoPi * o1), std::clamp(kTwoPi * o2, floor, kTwoPi)};
}

Beam neural_scan(const ScanPolicyNet& net, const Posterior& post)
{
    const auto o = net.forward(post.probs());
    return beam_from_outputs(o[0], o[1], net.n_bins());
}

Beam bisection_scan(const Posterior& post)
{
    const auto p = post.probs();
    const std::size_t n = p.size();
    auto empty = [&](std::size_t k) { return p[k % n] <= kSupportFloor; };

    // The support's covering arc is the complement of the longest circular run
    // of empty bins.
    std::size_t arc_start = 0;
    std::size_t arc_len = n;
    std::size_t best_gap = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (!empty(k) || empty(k + n - 1)) {
            continue;
        }
        std::size_t len = 0;
        while (len < n && empty(k + len)) {
            ++len;
        }
        if (len > best_gap) {
            best_gap = len;
            arc_start = (k + len) % n;
            arc_len = n - len;
        }
    }

    std::size_t best_bins = 1;
    double best_diff = std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (std::size_t len = 1; len <= arc_len; ++len) {
        acc += p[(arc_start + len - 1) % n];
        const double diff = std::fabs(acc - 0.5);
        if (diff < best_diff - kMassTolerance) {
            best_diff = diff;
            best_bins = len;
        }
    }
    return AngularGrid(n).span_beam(arc_start, best_bins);
}

Beam hpm_scan(const Posterior& post, int max_depth)
{
    if (max_depth < 1 || max_depth > 30) {
        throw std::invalid_argument("hpm max_depth must lie in [1, 30]");
    }
    const AngularGrid grid = post.grid();
    const auto p = post.probs();

    Beam best{};
    double best_diff = std::numeric_limits<double>::infinity();
    std::vector<double> mass;
    for (int depth = 1; depth <= max_depth; ++depth) {
        const std::size_t arcs = std::size_t{1} << depth;
        const double len = kTwoPi / static_cast<double>(arcs);
        mass.assign(arcs, 0.0);
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double c = grid.center(k);
            // Candidate arc from arithmetic, then settle it with the same
            // containment test the likelihood uses.
            auto j = static_cast<std::size_t>(std::ceil(c / len)) % arcs;
            j = (j + arcs - 1) % arcs;
            for (int probe = 0; probe < 3; ++probe) {
                const Beam arc{wrap(static_cast<double>(j) * len), len};
                if (beam_contains(arc, c)) {
                    break;
                }
                j = (j + (probe == 0 ? 1 : arcs - 2)) % arcs;
            }
            mass[j] += p[k];
        }
        for (std::size_t j = 0; j < arcs; ++j) {
            const double diff = std::fabs(mass[j] - 0.5);
            // Deeper (shorter) beams win ties; within a depth the first arc wins.
            const bool strictly = diff < best_diff - kMassTolerance;
            const bool tie_shorter = std::fabs(diff - best_diff) <= kMassTolerance && len < best.length;
            if (strictly || tie_shorter) {
                best_diff = diff;
                best = Beam{wrap(static_cast<double>(j) * len), len};
            }
        }
    }
    return best;
}

Policy Policy::hpm(int max_depth)
{
    if (max_depth < 1) {
        throw std::invalid_argument("hpm max_depth must be >= 1");
    }
    return Policy(Hpm{max_depth});
}

Policy Policy::neural(std::shared_ptr<const ScanPolicyNet> net)
{
    if (!net) {
        throw std::invalid_argument("neural policy needs a network");
    }
    return Policy(Neural{std::move(net)});
}

Beam Policy::scan(const Posterior& post) const
{
    struct Visitor {
        const Posterior& post;
        Beam operator()(const Bisection&) const { return bisection_scan(post); }
        Beam operator()(const Hpm& h) const { return hpm_scan(post, h.max_depth); }
        Beam operator()(const Neural& n) const { return neural_scan(*n.net, post); }
    };
    return std::visit(Visitor{post}, kind_);
}

std::string Policy::name() const
{
    struct Visitor {
        std::string operator()(const Bisection&) const { return "bisection"; }
        std::string operator()(const Hpm&) const { return "hpm"; }
        std::string operator()(const Neural&) const { return "neural"; }
    };
    return std::visit(Visitor{}, kind_);
}

const ScanPolicyNet* Policy::net() const
{
    if (const auto* n = std::get_if<Neural>(&kind_)) {
        return n->net.get();
    }
    return nullptr;
}

}  // namespace beamalign
