#pragma once

#include <string>
#include <vector>

#include "rotlab/idx.hpp"
#include "rotlab/rng.hpp"
#include "rotlab/tensor.hpp"

namespace rotlab {

enum class TransformKind { Rotation, Shift };
enum class AngleSampling { UniformContinuous, Grid };

struct AngleRange {
    double lo = 0.0;
    double hi = 0.0;

    bool contains_wrapped(double a, double tol = 1e-9) const;
};

// Declarative train/test split: which digits see which transformation
// parameter ranges. The default reproduces the restricted-rotation design:
// six digits at arbitrary angles, digits 3 and 4 confined to [-45,45] in
// training, probed at 180+-45 at test time. Digits 6 and 9 are excluded as
// rotationally ambiguous.
struct RotationProtocol {
    std::vector<int> free_digits;
    std::vector<int> restricted_digits;
    AngleRange restricted_range{-45.0, 45.0};
    AngleRange test_out_range{135.0, 225.0};  // taken mod 360 into (-180,180]
    TransformKind kind = TransformKind::Rotation;
    AngleSampling sampling = AngleSampling::UniformContinuous;
    double grid_step = 15.0;
    int train_per_digit = 0;  // 0 = every available source image
    int test_per_digit = 500;
    bool exclude_ambiguous = true;  // reject digits 6 and 9

    // shift-protocol analogues (pixels)
    int shift_free_max = 6;
    int shift_restricted_max = 1;
    int shift_out_min = 4;
    int shift_out_max = 6;

    static RotationProtocol paper_default();

    // Throws ConfigError listing every violation.
    void validate() const;

    std::vector<int> all_digits() const;
    bool is_restricted(int digit) const;
};

struct LabeledImage {
    Tensor pixels;  // untransformed 28x28 source
    int label = 0;
    double angle = 0.0;  // degrees in (-180,180]; 0 if untransformed
    int dx = 0, dy = 0;
    int source_index = -1;  // index into the originating MnistSet
};

// Applies the sample's assigned transformation to its source pixels.
Tensor transformed(const LabeledImage& s, TransformKind kind);

struct Manifest {
    std::vector<std::pair<std::string, std::string>> entries;

    void add(const std::string& key, const std::string& value) { entries.emplace_back(key, value); }
    void add(const std::string& key, long long value) { add(key, std::to_string(value)); }
    std::string to_text() const;
    void write(const std::string& path) const;
};

struct SplitBundle {
    std::vector<LabeledImage> train;     // from the native train split
    std::vector<LabeledImage> test_in;   // restricted digits, training-range params
    std::vector<LabeledImage> test_out;  // restricted digits, held-out params
    Manifest manifest;
    RotationProtocol protocol;
    std::uint64_t seed = 0;
};

// Deterministic given (protocol, source, seed). Test sets carry frozen
// transformation parameters; train entries carry an initial assignment that
// trainers may resample per epoch via resample_train_params.
SplitBundle build_split(const RotationProtocol& protocol, const MnistSource& source,
                        std::uint64_t seed);

// Fresh per-epoch transformation parameters for the train set, respecting
// each digit's declared range.
void resample_train_params(SplitBundle& split, Rng& rng);

// Draws a transformation parameter for one digit according to the protocol.
double sample_angle(const RotationProtocol& p, bool restricted, bool held_out, Rng& rng);
void sample_shift_params(const RotationProtocol& p, bool restricted, bool held_out, Rng& rng,
                         int& dx, int& dy);

}  // namespace rotlab
