#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "specmatch/assign.hpp"
#include "specmatch/fragdag.hpp"
#include "specmatch/spectrum.hpp"
#include "specmatch/tensor.hpp"

// Learned spectrum prediction with retrieval augmentation. Fragment
// embeddings come from molecule-level message passing; a matching branch
// runs extra passes over the fragmentation DAG in both edge directions,
// scores target/reference fragment pairs by cosine similarity, and softly
// aligns them. Aligned reference embeddings, aligned reference intensities,
// and per-fragment matching scores feed the intensity head, which emits one
// value per hydrogen-shift slot.

namespace specmatch {

enum class RagStrategy { None, Concat, Hungarian, Rrwm, Ngm };
enum class MatchLayer { Softmax, Sinkhorn };

struct ModelConfig {
  int hidden = 32;
  int mp_layers = 2;
  int tdim = 16;
  double match_tau = 0.02;
  double sinkhorn_tau = 0.05;
  int sinkhorn_iters = 30;
  double sinkhorn_eps = 1e-6;
  RagStrategy rag = RagStrategy::Ngm;
  MatchLayer match_layer = MatchLayer::Softmax;
  // When false the matching branch reuses the two intensity GNNs instead of
  // its own third set of weights.
  bool separate_match_gnn = true;
  int broken_cap = 8;
  FingerprintConfig fp;
};

std::string variant_name(const ModelConfig& cfg);
// "no-rag", "concat", "hungarian", "rrwm", "ngm-softmax", "ngm-sinkhorn".
void apply_variant(ModelConfig& cfg, const std::string& name);

class ParamStore {
 public:
  std::size_t add(const std::string& name, ad::Tensor value);
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;
  const std::string& name(std::size_t i) const { return names_[i]; }
  ad::Tensor& value(std::size_t i) { return values_[i]; }
  const ad::Tensor& value(std::size_t i) const { return values_[i]; }
  const ad::Tensor& get(const std::string& name) const { return values_[index_of(name)]; }
  std::size_t size() const { return values_.size(); }

 private:
  std::vector<std::string> names_;
  std::vector<ad::Tensor> values_;
  std::map<std::string, std::size_t> index_;
};

struct Model {
  ModelConfig cfg;
  ParamStore params;
};

// Deterministic uniform init, fan-in scaled; biases start at zero.
Model init_model(const ModelConfig& cfg, std::uint64_t seed);

void save_model(const Model& m, std::ostream& out);
Model load_model(std::istream& in);

// Everything the forward pass reads for one (molecule, energy) example.
// Pointers stay owned by the caller. reference is null for the no-RAG
// wiring and when retrieval found nothing.
struct SampleInput {
  const FragmentationDag* target = nullptr;
  double target_energy = 0;
  double adduct_offset = 0;
  const FragmentationDag* reference = nullptr;
  double mol_tanimoto = 0;
  struct RefChannel {
    const AssignedIntensities* table = nullptr;
    double energy = 0;
  };
  std::vector<RefChannel> ref_channels;
  const Mat* fixed_soft = nullptr;      // hard alignment for hungarian/rrwm
  const Mat* fixed_affinity = nullptr;  // node affinity behind the fixed alignment
  const std::vector<double>* ref_binned = nullptr;  // concat strategy input
};

// Binding of parameter tensors onto a tape (leaves in store order).
struct TapeBinding {
  ad::Tape* tape = nullptr;
  std::vector<ad::VarId> ids;
};
TapeBinding bind_params(ad::Tape& tape, Model& m, bool requires_grad);

struct ForwardResult {
  ad::VarId intensities = -1;           // [n_fragments, 13], sigmoid outputs
  ad::VarId match_soft = -1;            // [n, nr] or -1 when not applicable
  ad::VarId match_affinity = -1;        // [n, nr] or -1
  ad::VarId matching_scores = -1;       // [n, 1] or -1
};

ForwardResult forward(ad::Tape& tape, const TapeBinding& bind, const Model& m,
                      const SampleInput& sample);

// Precomputed mapping of (fragment, shift) slots onto the union support of
// predicted and observed bins; the final slot collects out-of-range masses
// and carries zero target intensity.
struct LossTarget {
  std::vector<std::int32_t> entry_bins;  // n*13, slot -> support position
  std::vector<double> target_vec;        // support size + 1
};
LossTarget build_loss_target(const FragmentationDag& dag, double adduct_offset,
                             const BinnedSpectrum& truth);

// 1 - cosine(pred scattered onto support, target support vector).
ad::VarId cosine_loss(ad::Tape& tape, ad::VarId pred, const LossTarget& target);

// No-grad forward returning plain intensities.
Mat predict_intensities(Model& m, const SampleInput& sample);

// Building blocks of forward(), exposed so each can be verified in
// isolation. BlockCtx resolves parameter names against a tape binding.
namespace detail {

struct BlockCtx {
  ad::Tape& tape;
  const TapeBinding& bind;
  const Model& m;
  ad::VarId p(const std::string& name) const { return bind.ids[m.params.index_of(name)]; }
};

ad::VarId gnn_molecule(BlockCtx& c, const std::string& gnn, const MolGraph& mol);
ad::VarId fragment_embed(BlockCtx& c, const std::string& gnn, const std::string& mlp,
                         const FragmentationDag& dag);
ad::VarId dag_embed(BlockCtx& c, ad::VarId h, const FragmentationDag& dag);
ad::VarId ref_intensity_embed(BlockCtx& c, const SampleInput& sample);
ad::VarId attention_block(BlockCtx& c, const std::string& prefix, ad::VarId x, std::size_t d);
ad::VarId sinkhorn_match(BlockCtx& c, ad::VarId scores);
ad::VarId intensity_head(BlockCtx& c, ad::VarId head_in);

}  // namespace detail

struct TrainConfig {
  int epochs = 8;
  double lr = 0.05;
  double momentum = 0.9;
  double clip_norm = 5.0;
  double lr_decay = 1.0;
  std::uint64_t seed = 1;
};

// One molecule with one forward variant per collision energy; epochs rotate
// through the variants round-robin.
struct TrainItem {
  std::vector<SampleInput> variants;
  std::vector<LossTarget> targets;  // aligned with variants
};

struct TrainCurve {
  std::vector<double> epoch_mean_loss;
};

// Momentum SGD with global-norm gradient clipping; throws std::runtime_error
// with context if the loss goes non-finite.
TrainCurve train(Model& m, const std::vector<TrainItem>& items, const TrainConfig& cfg);

}  // namespace specmatch
