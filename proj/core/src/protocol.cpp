#include "rotlab/protocol.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "rotlab/transforms.hpp"

namespace rotlab {

bool AngleRange::contains_wrapped(double a, double tol) const {
    // membership of the wrapped angle in [lo,hi] taken mod 360
    for (double base : {0.0, 360.0, -360.0}) {
        const double t = a + base;
        if (t >= lo - tol && t <= hi + tol) return true;
    }
    return false;
}

RotationProtocol RotationProtocol::paper_default() {
    RotationProtocol p;
    p.free_digits = {0, 1, 2, 5, 7, 8};
    p.restricted_digits = {3, 4};
    return p;
}

std::vector<int> RotationProtocol::all_digits() const {
    std::vector<int> d = free_digits;
    d.insert(d.end(), restricted_digits.begin(), restricted_digits.end());
    std::sort(d.begin(), d.end());
    return d;
}

bool RotationProtocol::is_restricted(int digit) const {
    return std::find(restricted_digits.begin(), restricted_digits.end(), digit) !=
           restricted_digits.end();
}

void RotationProtocol::validate() const {
    std::vector<std::string> bad;
    if (free_digits.empty() && restricted_digits.empty()) {
        bad.push_back("protocol has no digits at all");
    }
    std::set<int> seen;
    for (int d : all_digits()) {
        if (d < 0 || d > 9) bad.push_back("digit " + std::to_string(d) + " outside 0..9");
        if (!seen.insert(d).second) {
            bad.push_back("digit " + std::to_string(d) + " appears in both roles");
        }
        if (exclude_ambiguous && (d == 6 || d == 9)) {
            bad.push_back("digit " + std::to_string(d) +
                          " is rotationally ambiguous and excluded under the default protocol");
        }
    }
    if (!restricted_digits.empty() && kind == TransformKind::Rotation) {
        if (restricted_range.lo >= restricted_range.hi) {
            bad.push_back("restricted angle range is empty");
        }
        if (test_out_range.lo >= test_out_range.hi) {
            bad.push_back("test_out angle range is empty");
        }
        // the held-out interval must not meet the training interval (mod 360)
        for (double probe = test_out_range.lo; probe <= test_out_range.hi; probe += 1.0) {
            if (restricted_range.contains_wrapped(wrap_angle_deg(probe))) {
                bad.push_back("test_out range overlaps the restricted training range at " +
                              std::to_string(probe) + " deg");
                break;
            }
        }
    }
    if (kind == TransformKind::Shift) {
        if (shift_restricted_max >= shift_out_min) {
            bad.push_back("restricted shift range overlaps held-out shifts");
        }
        if (shift_out_max > 10) bad.push_back("held-out shifts exceed the +-10 transform limit");
    }
    if (test_per_digit < 0) bad.push_back("test_per_digit negative");
    if (train_per_digit < 0) bad.push_back("train_per_digit negative");
    if (sampling == AngleSampling::Grid && grid_step <= 0.0) {
        bad.push_back("grid sampling needs a positive step");
    }
    if (!bad.empty()) throw ConfigError(bad);
}

Tensor transformed(const LabeledImage& s, TransformKind kind) {
    if (kind == TransformKind::Rotation) return rotate_image(s.pixels, s.angle, 0.0);
    return shift_image(s.pixels, s.dx, s.dy, 0.0);
}

std::string Manifest::to_text() const {
    std::string out;
    for (const auto& [k, v] : entries) {
        out += k;
        out += " = ";
        out += v;
        out += "\n";
    }
    return out;
}

void Manifest::write(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error("cannot write manifest " + path);
    os << to_text();
}

double sample_angle(const RotationProtocol& p, bool restricted, bool held_out, Rng& rng) {
    AngleRange r{-180.0, 180.0};
    if (held_out) {
        r = p.test_out_range;
    } else if (restricted) {
        r = p.restricted_range;
    }
    double a;
    if (p.sampling == AngleSampling::Grid) {
        const int steps = static_cast<int>((r.hi - r.lo) / p.grid_step) + 1;
        a = r.lo + p.grid_step * rng.uniform_int(steps);
    } else {
        a = rng.uniform(r.lo, r.hi);
    }
    return wrap_angle_deg(a);
}

void sample_shift_params(const RotationProtocol& p, bool restricted, bool held_out, Rng& rng,
                         int& dx, int& dy) {
    if (held_out) {
        // magnitude in [out_min, out_max] on at least one axis, random signs
        const int span = p.shift_out_max - p.shift_out_min + 1;
        dx = (p.shift_out_min + rng.uniform_int(span)) * (rng.uniform_int(2) ? 1 : -1);
        dy = (p.shift_out_min + rng.uniform_int(span)) * (rng.uniform_int(2) ? 1 : -1);
    } else {
        const int m = restricted ? p.shift_restricted_max : p.shift_free_max;
        dx = rng.uniform_int(2 * m + 1) - m;
        dy = rng.uniform_int(2 * m + 1) - m;
    }
}

namespace {

void assign_params(LabeledImage& s, const RotationProtocol& p, bool restricted, bool held_out,
                   Rng& rng) {
    if (p.kind == TransformKind::Rotation) {
        s.angle = sample_angle(p, restricted, held_out, rng);
    } else {
        sample_shift_params(p, restricted, held_out, rng, s.dx, s.dy);
    }
}

}  // namespace

SplitBundle build_split(const RotationProtocol& protocol, const MnistSource& source,
                        std::uint64_t seed) {
    protocol.validate();
    for (int d : protocol.all_digits()) {
        bool found = std::find(source.train.labels.begin(), source.train.labels.end(), d) !=
                     source.train.labels.end();
        if (!found) throw ConfigError("digit " + std::to_string(d) + " absent from source data");
    }

    SplitBundle split;
    split.protocol = protocol;
    split.seed = seed;
    Rng rng(seed);

    // per-digit index pools, shuffled deterministically
    std::map<int, std::vector<int>> train_pool, test_pool;
    for (std::size_t i = 0; i < source.train.labels.size(); ++i) {
        train_pool[source.train.labels[i]].push_back(static_cast<int>(i));
    }
    for (std::size_t i = 0; i < source.test.labels.size(); ++i) {
        test_pool[source.test.labels[i]].push_back(static_cast<int>(i));
    }

    std::map<int, int> train_counts, in_counts, out_counts;

    for (int d : protocol.all_digits()) {
        auto& pool = train_pool[d];
        rng.shuffle(pool);
        const int want = protocol.train_per_digit == 0
                             ? static_cast<int>(pool.size())
                             : std::min<int>(protocol.train_per_digit, static_cast<int>(pool.size()));
        const bool restricted = protocol.is_restricted(d);
        for (int i = 0; i < want; ++i) {
            LabeledImage s;
            s.pixels = source.train.images[static_cast<std::size_t>(pool[static_cast<std::size_t>(i)])];
            s.label = d;
            s.source_index = pool[static_cast<std::size_t>(i)];
            assign_params(s, protocol, restricted, false, rng);
            split.train.push_back(std::move(s));
        }
        train_counts[d] = want;
    }
    rng.shuffle(split.train);

    for (int d : protocol.restricted_digits) {
        auto& pool = test_pool[d];
        rng.shuffle(pool);
        // disjoint halves for the two probe sets
        const int half = static_cast<int>(pool.size()) / 2;
        const int n_in = std::min(protocol.test_per_digit, half);
        const int n_out = std::min(protocol.test_per_digit, static_cast<int>(pool.size()) - half);
        for (int i = 0; i < n_in; ++i) {
            LabeledImage s;
            s.pixels = source.test.images[static_cast<std::size_t>(pool[static_cast<std::size_t>(i)])];
            s.label = d;
            s.source_index = pool[static_cast<std::size_t>(i)];
            assign_params(s, protocol, true, false, rng);
            split.test_in.push_back(std::move(s));
        }
        for (int i = 0; i < n_out; ++i) {
            LabeledImage s;
            s.pixels =
                source.test.images[static_cast<std::size_t>(pool[static_cast<std::size_t>(half + i)])];
            s.label = d;
            s.source_index = pool[static_cast<std::size_t>(half + i)];
            assign_params(s, protocol, true, true, rng);
            split.test_out.push_back(std::move(s));
        }
        in_counts[d] = n_in;
        out_counts[d] = n_out;
    }

    Manifest& m = split.manifest;
    m.add("seed", static_cast<long long>(seed));
    m.add("transform", protocol.kind == TransformKind::Rotation ? "rotation" : "shift");
    std::string fd, rd;
    for (int d : protocol.free_digits) fd += (fd.empty() ? "" : ",") + std::to_string(d);
    for (int d : protocol.restricted_digits) rd += (rd.empty() ? "" : ",") + std::to_string(d);
    m.add("free_digits", fd);
    m.add("restricted_digits", rd);
    m.add("restricted_range",
          std::to_string(protocol.restricted_range.lo) + ".." + std::to_string(protocol.restricted_range.hi));
    m.add("test_out_range",
          std::to_string(protocol.test_out_range.lo) + ".." + std::to_string(protocol.test_out_range.hi));
    m.add("train_total", static_cast<long long>(split.train.size()));
    for (auto& [d, c] : train_counts) m.add("train_count_" + std::to_string(d), c);
    for (auto& [d, c] : in_counts) m.add("test_in_count_" + std::to_string(d), c);
    for (auto& [d, c] : out_counts) m.add("test_out_count_" + std::to_string(d), c);
    return split;
}

void resample_train_params(SplitBundle& split, Rng& rng) {
    for (LabeledImage& s : split.train) {
        assign_params(s, split.protocol, split.protocol.is_restricted(s.label), false, rng);
    }
}

}  // namespace rotlab
