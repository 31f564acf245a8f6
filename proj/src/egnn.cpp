#include "pegnn/egnn.hpp"

#include <cmath>

#include "pegnn/errors.hpp"
#include "pegnn/noise.hpp"

namespace pegnn {

void EgnnConfig::validate() const {
  if (n_layers < 1) throw ConfigError("model.n_layers must be >= 1");
  if (hidden < 1) throw ConfigError("model.hidden must be >= 1");
  if (noise_dim < 0) throw ConfigError("model.noise_dim must be >= 0");
  if (activation != "silu") throw ConfigError("model.activation: only 'silu' is supported");
}

namespace {

std::int64_t mlp2(std::int64_t in, std::int64_t hidden, std::int64_t out) {
  return in * hidden + hidden + hidden * out + out;
}

std::string layer_prefix(int l) { return "layer" + std::to_string(l) + "."; }

}  // namespace

ParamCount param_count(const EgnnConfig& config) {
  config.validate();
  const std::int64_t h = config.hidden;
  const std::int64_t z = config.noise_dim;
  const std::int64_t per_layer = mlp2(2 * h + 3, h, h) + mlp2(2 * h, h, h) + mlp2(h, h, 1) + mlp2(h, h, 1);
  ParamCount c;
  c.backbone = config.n_layers * per_layer + 2 * h;
  c.noise_overhead = z * z + 2 * config.n_layers * h * z;
  c.ratio = static_cast<double>(c.backbone + c.noise_overhead) / static_cast<double>(c.backbone);
  return c;
}

ad::ParamVector make_param_layout(const EgnnConfig& config) {
  config.validate();
  const int h = config.hidden;
  ad::ParamVector p;
  p.add("embed.W", 1, h);
  p.add("embed.b", 1, h);
  auto mlp = [&](const std::string& name, int in, int out) {
    p.add(name + ".W1", in, h);
    p.add(name + ".b1", 1, h);
    p.add(name + ".W2", h, out);
    p.add(name + ".b2", 1, out);
  };
  for (int l = 0; l < config.n_layers; ++l) {
    const auto pre = layer_prefix(l);
    mlp(pre + "phi_e", 2 * h + 3, h);
    mlp(pre + "phi_h", 2 * h, h);
    mlp(pre + "phi_x", h, 1);
    mlp(pre + "phi_v", h, 1);
    if (config.perturbed()) {
      p.add(pre + "phi_e.W_noise", h, config.noise_dim);
      p.add(pre + "phi_h.W_noise", h, config.noise_dim);
    }
  }
  if (config.perturbed()) p.add("noise.W_z", config.noise_dim, config.noise_dim);
  return p;
}

ad::ParamVector init_params(const EgnnConfig& config, std::uint64_t seed, NoiseGeneratorInit wz_init) {
  ad::ParamVector p = make_param_layout(config);
  Rng rng = make_rng(derive_seed(seed, Stream::kInit));
  int fan_in = 1;
  for (std::size_t s = 0; s < p.slots().size(); ++s) {
    const auto& slot = p.slots()[s];
    auto view = p.view(s);
    const bool is_noise = slot.name.ends_with("W_noise");
    const bool is_wz = slot.name == "noise.W_z";
    if (is_noise) {
      view.setZero();
      continue;
    }
    if (is_wz) {
      if (wz_init == NoiseGeneratorInit::kZero) {
        view.setZero();
        continue;
      }
      fan_in = slot.cols;
    } else if (slot.name.ends_with(".b") || slot.name.ends_with(".b1") || slot.name.ends_with(".b2")) {
      // biases share the fan-in of the weight registered just before them
    } else {
      fan_in = slot.rows;
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < view.size(); ++i) view.data()[i] = uniform_real(rng, -bound, bound);
  }
  return p;
}

GraphBatch make_batch(std::span<const ParticleState* const> states, int copies) {
  if (copies < 1) throw ConfigError("make_batch: copies must be >= 1");
  GraphBatch b;
  b.n_graphs = static_cast<int>(states.size()) * copies;
  int nodes = 0;
  int edges = 0;
  for (const auto* s : states) {
    if (s->size() < 2) throw ConfigError("make_batch: every graph needs at least 2 particles");
    nodes += copies * s->size();
    edges += copies * s->size() * (s->size() - 1);
  }
  b.n_nodes = nodes;
  b.n_edges = edges;
  b.positions.resize(nodes, 3);
  b.velocities.resize(nodes, 3);
  b.charges.resize(nodes, 1);
  b.inv_degree.resize(nodes, 1);
  b.charge_product.resize(edges, 1);
  auto recv = std::make_shared<ad::IndexList>();
  auto send = std::make_shared<ad::IndexList>();
  auto egraph = std::make_shared<ad::IndexList>();
  auto ngraph = std::make_shared<ad::IndexList>();
  recv->reserve(static_cast<std::size_t>(edges));
  send->reserve(static_cast<std::size_t>(edges));
  egraph->reserve(static_cast<std::size_t>(edges));
  ngraph->reserve(static_cast<std::size_t>(nodes));

  int node = 0;
  int edge = 0;
  int graph = 0;
  for (const auto* s : states) {
    const int n = s->size();
    for (int c = 0; c < copies; ++c, ++graph) {
      b.node_offset.push_back(node);
      for (int i = 0; i < n; ++i) {
        b.positions.row(node + i) = s->positions.row(i);
        b.velocities.row(node + i) = s->velocities.row(i);
        b.charges(node + i, 0) = s->charges[i];
        b.inv_degree(node + i, 0) = 1.0 / static_cast<double>(n - 1);
        ngraph->push_back(graph);
      }
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          if (i == j) continue;
          recv->push_back(node + i);
          send->push_back(node + j);
          egraph->push_back(graph);
          b.charge_product(edge, 0) = s->charges[i] * s->charges[j];
          ++edge;
        }
      }
      node += n;
    }
  }
  b.node_offset.push_back(node);
  b.edge_receiver = std::move(recv);
  b.edge_sender = std::move(send);
  b.edge_graph = std::move(egraph);
  b.node_graph = std::move(ngraph);
  return b;
}

namespace {

// Linear -> SiLU -> Linear applied to rows of x.
ad::Var mlp2_forward(ad::Tape& t, ad::Var x, const std::string& name) {
  const ad::Var h = t.add_row(t.matmul(x, t.param(name + ".W1")), t.param(name + ".b1"));
  return t.add_row(t.matmul(t.silu(h), t.param(name + ".W2")), t.param(name + ".b2"));
}

}  // namespace

ad::Var egnn_forward(ad::Tape& t, const EgnnConfig& config, const GraphBatch& batch, ad::Var z_rows,
                     InjectionTrace* trace) {
  config.validate();
  if (!t.params()) throw ConfigError("egnn_forward: tape has no parameters");
  const bool noisy = z_rows.valid();
  if (noisy) {
    if (!config.perturbed()) {
      throw ConfigError("egnn_forward: noise vector supplied but model.noise_dim is 0");
    }
    const auto& z = t.value(z_rows);
    if (z.rows() != batch.n_graphs || z.cols() != config.noise_dim) {
      throw ConfigError("egnn_forward: noise rows must be n_graphs x noise_dim");
    }
  }
  const int h_dim = config.hidden;
  const auto& recv = batch.edge_receiver;
  const auto& send = batch.edge_sender;

  ad::Var h = t.add_row(t.matmul(t.constant(batch.charges), t.param("embed.W")), t.param("embed.b"));
  ad::Var x = t.constant(batch.positions);
  ad::Var v = t.constant(batch.velocities);
  const ad::Var qq = t.constant(batch.charge_product);
  const ad::Var inv_degree = t.constant(batch.inv_degree);

  for (int l = 0; l < config.n_layers; ++l) {
    const auto pre = layer_prefix(l);
    const ad::Var diff = t.sub(t.gather_rows(x, recv), t.gather_rows(x, send));
    const ad::Var d2 = t.row_sum(t.square(diff));
    const ad::Var d = t.sqrt(d2);

    // Edge model. The first linear map of phi_e acts on (h_i, h_j, d^2, d, q_i q_j);
    // its row blocks are applied per node before gathering to edges.
    const ad::Var we1 = t.param(pre + "phi_e.W1");
    const ad::Var from_i = t.gather_rows(t.matmul(h, t.slice_rows(we1, 0, h_dim)), recv);
    const ad::Var from_j = t.gather_rows(t.matmul(h, t.slice_rows(we1, h_dim, h_dim)), send);
    const ad::Var from_scalars = t.matmul(t.concat_cols({d2, d, qq}), t.slice_rows(we1, 2 * h_dim, 3));
    ad::Var e1 = t.add_row(t.add(t.add(from_i, from_j), from_scalars), t.param(pre + "phi_e.b1"));
    if (noisy) {
      e1 = inject(t, e1, t.param(pre + "phi_e.W_noise"), z_rows, batch.edge_graph);
      if (trace) trace->edge_blocks.push_back(t.value(t.gather_rows(z_rows, batch.edge_graph)));
    }
    const ad::Var m = t.add_row(t.matmul(t.silu(e1), t.param(pre + "phi_e.W2")), t.param(pre + "phi_e.b2"));

    // Velocity and position update; phi_x and phi_v never see the noise.
    const ad::Var coef = mlp2_forward(t, m, pre + "phi_x");
    const ad::Var pull =
        t.mul_col(t.scatter_add_rows(t.mul_col(diff, coef), recv, batch.n_nodes), inv_degree);
    const ad::Var vel_gate = mlp2_forward(t, h, pre + "phi_v");
    v = t.add(t.mul_col(v, vel_gate), pull);
    x = t.add(x, v);

    // Node model; the last layer's features do not reach the output.
    if (l + 1 == config.n_layers) break;
    const ad::Var m_agg = t.scatter_add_rows(m, recv, batch.n_nodes);
    const ad::Var wh1 = t.param(pre + "phi_h.W1");
    ad::Var n1 = t.add_row(t.add(t.matmul(h, t.slice_rows(wh1, 0, h_dim)),
                                 t.matmul(m_agg, t.slice_rows(wh1, h_dim, h_dim))),
                           t.param(pre + "phi_h.b1"));
    if (noisy) {
      n1 = inject(t, n1, t.param(pre + "phi_h.W_noise"), z_rows, batch.node_graph);
      if (trace) trace->node_blocks.push_back(t.value(t.gather_rows(z_rows, batch.node_graph)));
    }
    h = t.add_row(t.matmul(t.silu(n1), t.param(pre + "phi_h.W2")), t.param(pre + "phi_h.b2"));
  }
  return x;
}

Coords egnn_forward(const ad::ParamVector& params, const EgnnConfig& config, const ParticleState& state,
                    const std::optional<Eigen::VectorXd>& z) {
  if (z && !config.perturbed()) {
    throw ConfigError("egnn_forward: noise vector supplied but model.noise_dim is 0");
  }
  if (z && z->size() != config.noise_dim) {
    throw ConfigError("egnn_forward: noise vector length " + std::to_string(z->size()) +
                      " differs from model.noise_dim " + std::to_string(config.noise_dim));
  }
  const ParticleState* ptr = &state;
  const GraphBatch batch = make_batch(std::span<const ParticleState* const>(&ptr, 1));
  ad::Tape tape(params);
  ad::Var z_var;
  if (z) z_var = tape.constant(z->transpose());
  return tape.value(egnn_forward(tape, config, batch, z_var));
}

std::vector<Coords> egnn_forward_copies(const ad::ParamVector& params, const EgnnConfig& config,
                                        const ParticleState& state, const ad::Matrix& z_rows) {
  const int k = static_cast<int>(z_rows.rows());
  const ParticleState* ptr = &state;
  const GraphBatch batch = make_batch(std::span<const ParticleState* const>(&ptr, 1), k);
  ad::Tape tape(params);
  const ad::Matrix& out = tape.value(egnn_forward(tape, config, batch, tape.constant(z_rows)));
  std::vector<Coords> result;
  const int n = state.size();
  for (int c = 0; c < k; ++c) result.emplace_back(out.middleRows(c * n, n));
  return result;
}

std::vector<std::size_t> noise_slots(const ad::ParamVector& params) {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < params.slots().size(); ++s) {
    const auto& name = params.slots()[s].name;
    if (name.ends_with("W_noise") || name == "noise.W_z") out.push_back(s);
  }
  return out;
}

}  // namespace pegnn
