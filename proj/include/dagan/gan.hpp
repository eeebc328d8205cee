#pragma once

#include <filesystem>
#include <map>
#include <vector>

#include "dagan/checkpoint.hpp"
#include "dagan/data.hpp"
#include "dagan/nets.hpp"

namespace dagan {

enum class GanMode { Cycle, Forward };

struct GanConfig {
    double lambda_cycle = 10.0;  // paper full scale value
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int batch_size = 1;  // paper full scale value
    int resize_to = 36;  // paper full scale: 286
    int crop_to = 32;    // paper full scale: 256
    int total_steps = 500;
    GanMode mode = GanMode::Cycle;
    bool conditioned = false;
    std::uint64_t seed = 0;
    GeneratorSpec gen;
    DiscriminatorSpec disc;

    void validate() const;
    AdamConfig adam() const { return AdamConfig{learning_rate, beta1, beta2, 1e-8}; }
};

struct LossRow {
    int step = 0;
    double d_y = 0, d_x = 0, g_adv = 0, f_adv = 0, cyc_fwd = 0, cyc_bwd = 0, total = 0;
};

// F and D_X stay empty in forward mode.
struct TrainState {
    int step = 0;
    GeneratorParams g, f;
    DiscriminatorParams d_x, d_y;
    AdamState opt_g, opt_f, opt_d_x, opt_d_y;
    Rng rng{0};
    std::vector<LossRow> history;
};

TrainState init_train_state(const GanConfig& cfg);

// mean over patches of bce(D(real), 1) + bce(D(fake), 0); the fake batch is
// detached internally so no gradient ever reaches the generator from here
Tensor discriminator_loss(const DiscriminatorParams& d, const Tensor& real_batch, const Tensor& fake_batch);

// non-saturating form: mean over patches of bce(D(fake), 1)
Tensor generator_adv_loss(const DiscriminatorParams& d, const Tensor& fake_batch);

// l1(second(first(batch)), batch)
Tensor cycle_loss(const GeneratorParams& first, const GeneratorParams& second, const Tensor& batch);

double total_objective(double adv_g, double adv_f, double cyc_fwd, double cyc_bwd, double lambda_cycle);

// one alternating round: D_Y step, D_X step (cycle mode), joint G/F step;
// appends exactly one loss row
void train_step(TrainState& state, const Tensor& x_batch, const Tensor& y_batch, const GanConfig& cfg);

// header: step,d_y,d_x,g_adv,f_adv,cyc_fwd,cyc_bwd,total
void write_loss_csv(const std::vector<LossRow>& history, const std::filesystem::path& path);

struct GanArtifacts {
    // class id -> checkpoint; -1 is the unconditioned model
    std::map<int, std::filesystem::path> checkpoints;
    std::map<int, std::filesystem::path> loss_csvs;
};

GanArtifacts run_training(const DatasetManifest& source, const DatasetManifest& target, const GanConfig& cfg,
                          const std::filesystem::path& out_dir);

// recovers the architecture from parameter names and shapes
GeneratorSpec infer_generator_spec(const ParamMap& params);

// strips the "g." prefix from each checkpoint and rebuilds the generators
std::map<int, GeneratorParams> load_generators(const std::map<int, std::filesystem::path>& checkpoints);

// resize to crop_to, translate, resize back, keep annotations untouched;
// conditioned generators are picked by majority box class (ties: lowest id),
// with the -1 entry as fallback
DatasetManifest transform_dataset(const std::map<int, GeneratorParams>& generators, const DatasetManifest& source,
                                  int crop_to, const std::filesystem::path& out_dir);

}  // namespace dagan
