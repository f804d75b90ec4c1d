#include "forler/verify.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace forler {

void validate(const TabularMDP& mdp, const TabularPolicy& policy) {
  validate(mdp);
  if (policy.probs.rows() != mdp.n_states || policy.probs.cols() != mdp.n_actions) {
    throw std::invalid_argument("policy shape does not match the mdp");
  }
  for (int s = 0; s < mdp.n_states; ++s) {
    if (policy.probs.row(s).minCoeff() < 0.0 ||
        std::abs(policy.probs.row(s).sum() - 1.0) > 1e-12) {
      throw std::invalid_argument("policy rows must be probability vectors");
    }
  }
}

TabularPolicy deterministic_policy(const std::vector<int>& actions, int n_actions) {
  TabularPolicy policy;
  policy.probs = Matrix::Zero(static_cast<Eigen::Index>(actions.size()), n_actions);
  for (std::size_t s = 0; s < actions.size(); ++s) {
    if (actions[s] < 0 || actions[s] >= n_actions) {
      throw std::out_of_range("action index out of range");
    }
    policy.probs(static_cast<Eigen::Index>(s), actions[s]) = 1.0;
  }
  return policy;
}

TabularPolicy epsilon_greedy_policy(const std::vector<int>& greedy, int n_actions,
                                    Scalar epsilon) {
  if (epsilon < 0.0 || epsilon > 1.0) {
    throw std::invalid_argument("epsilon must lie in [0, 1]");
  }
  TabularPolicy policy;
  policy.probs = Matrix::Constant(static_cast<Eigen::Index>(greedy.size()), n_actions,
                                  epsilon / n_actions);
  for (std::size_t s = 0; s < greedy.size(); ++s) {
    policy.probs(static_cast<Eigen::Index>(s), greedy[s]) += 1.0 - epsilon;
  }
  return policy;
}

TabularPolicy tabular_policy_from_actor(const ApproximatorParams& actor,
                                        int n_states, int n_actions) {
  std::vector<int> actions(static_cast<std::size_t>(n_states));
  for (int s = 0; s < n_states; ++s) {
    const Vector out = forward(actor, one_hot(s, n_states));
    actions[static_cast<std::size_t>(s)] = snap_to_action_index(out(0), n_actions);
  }
  return deterministic_policy(actions, n_actions);
}

namespace {

struct InducedChain {
  Matrix p_pi;
  Vector r_pi;
};

InducedChain induce(const TabularMDP& mdp, const TabularPolicy& policy) {
  InducedChain chain;
  chain.p_pi = Matrix::Zero(mdp.n_states, mdp.n_states);
  chain.r_pi = Vector::Zero(mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      const Scalar p = policy.probs(s, a);
      if (p == 0.0) continue;
      chain.p_pi.row(s) += p * mdp.transition[a].row(s);
      chain.r_pi(s) += p * mdp.reward(s, a);
    }
  }
  return chain;
}

}  // namespace

PolicyValue exact_policy_value(const TabularMDP& mdp, const TabularPolicy& policy) {
  validate(mdp, policy);
  const InducedChain chain = induce(mdp, policy);
  const Matrix system =
      Matrix::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * chain.p_pi;
  PolicyValue out;
  out.v = system.partialPivLu().solve(chain.r_pi);
  const Scalar residual =
      (out.v - (chain.r_pi + mdp.gamma * (chain.p_pi * out.v))).cwiseAbs().maxCoeff();
  if (!(residual <= 1e-10)) {
    throw std::runtime_error("policy evaluation residual exceeds 1e-10");
  }
  out.j = mdp.initial_distribution.dot(out.v);
  return out;
}

Vector visitation_distribution(const TabularMDP& mdp, const TabularPolicy& policy) {
  validate(mdp, policy);
  const InducedChain chain = induce(mdp, policy);
  const Matrix system =
      Matrix::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * chain.p_pi.transpose();
  Vector d = (1.0 - mdp.gamma) *
             system.partialPivLu().solve(mdp.initial_distribution);
  if (d.minCoeff() < -1e-12 || std::abs(d.sum() - 1.0) > 1e-10) {
    throw std::runtime_error("visitation distribution failed validity checks");
  }
  d = d.cwiseMax(0.0);
  return d;
}

TabularMDP empirical_mdp(const OfflineDataset& dataset, int n_states, int n_actions,
                         Scalar gamma, const Vector& initial_distribution) {
  if (dataset.transitions.empty()) {
    throw std::invalid_argument("empirical model needs a non-empty dataset");
  }
  TabularMDP mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.gamma = gamma;
  mdp.initial_distribution = initial_distribution;
  mdp.transition.assign(static_cast<std::size_t>(n_actions),
                        Matrix::Zero(n_states, n_states));
  mdp.reward = Matrix::Zero(n_states, n_actions);
  Matrix counts = Matrix::Zero(n_states, n_actions);
  for (const auto& tr : dataset.transitions) {
    const int s = static_cast<int>(std::lround(tr.state(0)));
    const int a = static_cast<int>(std::lround(tr.action(0)));
    const int sp = static_cast<int>(std::lround(tr.next_state(0)));
    if (s < 0 || s >= n_states || a < 0 || a >= n_actions || sp < 0 ||
        sp >= n_states) {
      throw std::invalid_argument("dataset transition outside the declared space");
    }
    mdp.transition[static_cast<std::size_t>(a)](s, sp) += 1.0;
    mdp.reward(s, a) += tr.reward;
    counts(s, a) += 1.0;
  }
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      if (counts(s, a) > 0.0) {
        mdp.transition[static_cast<std::size_t>(a)].row(s) /= counts(s, a);
        mdp.reward(s, a) /= counts(s, a);
      } else {
        mdp.transition[static_cast<std::size_t>(a)](s, s) = 1.0;
      }
    }
  }
  validate(mdp);
  return mdp;
}

namespace {

struct QuadTerms {
  Scalar term_d;
  Scalar term_quad_pi;
  Scalar term_quad_beta;
};

// Shared arithmetic for the bound's three expectation terms, evaluated under
// the visitation distributions of the supplied model.
QuadTerms bound_terms(const TabularMDP& model, const TabularPolicy& pi_star,
                      const TabularPolicy& behavior, const Vector& embed,
                      const std::vector<int>& star_actions, Scalar alpha,
                      Scalar eta) {
  const Vector d_star = visitation_distribution(model, pi_star);
  const Vector d_beta = visitation_distribution(model, behavior);
  QuadTerms terms{0.0, 0.0, 0.0};
  for (int s = 0; s < model.n_states; ++s) {
    const int a_star = star_actions[static_cast<std::size_t>(s)];
    const Scalar beta_prob = behavior.probs(s, a_star);
    terms.term_d += d_star(s) * (1.0 - beta_prob) / beta_prob;
    const Scalar mean_embed = behavior.probs.row(s).dot(embed);
    const Scalar diff = embed(a_star) - mean_embed;
    terms.term_quad_pi += d_star(s) * diff * diff;
    Scalar variance = 0.0;
    for (int a = 0; a < model.n_actions; ++a) {
      const Scalar centered = embed(a) - mean_embed;
      variance += behavior.probs(s, a) * centered * centered;
    }
    terms.term_quad_beta += d_beta(s) * variance;
  }
  terms.term_d *= alpha / (1.0 - model.gamma);
  terms.term_quad_pi *= eta / (1.0 - eta);
  terms.term_quad_beta *= eta / (1.0 - eta);
  return terms;
}

}  // namespace

BoundReport check_theorem1(const TabularMDP& mdp, const TabularPolicy& pi_star,
                           const TabularPolicy& behavior,
                           const Vector& action_embedding, Scalar alpha, Scalar eta,
                           const TabularMDP* empirical) {
  validate(mdp, pi_star);
  validate(mdp, behavior);
  if (action_embedding.size() != mdp.n_actions) {
    throw std::invalid_argument("need one embedded value per action");
  }
  if (!(alpha >= 0.0) || !(eta > 0.0) || !(eta < 1.0)) {
    throw std::invalid_argument("need alpha >= 0 and eta in (0, 1)");
  }

  std::vector<int> star_actions(static_cast<std::size_t>(mdp.n_states), -1);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      const Scalar p = pi_star.probs(s, a);
      if (p != 0.0 && p != 1.0) {
        throw std::invalid_argument("pi_star must be deterministic");
      }
      if (p == 1.0) star_actions[static_cast<std::size_t>(s)] = a;
    }
  }

  BoundReport report;
  report.alpha = alpha;
  report.eta = eta;
  report.gamma = mdp.gamma;
  const PolicyValue star_value = exact_policy_value(mdp, pi_star);
  report.j_pi_star = star_value.j;
  report.j_behavior = exact_policy_value(mdp, behavior).j;
  report.lhs = report.j_pi_star - report.j_behavior;

  for (int s = 0; s < mdp.n_states; ++s) {
    if (behavior.probs(s, star_actions[static_cast<std::size_t>(s)]) <= 0.0) {
      report.applicable = false;
      return report;  // density ratio undefined; bound reported as inapplicable
    }
  }
  report.applicable = true;

  const QuadTerms terms =
      bound_terms(mdp, pi_star, behavior, action_embedding, star_actions, alpha, eta);
  report.term_d = terms.term_d;
  report.term_quad_pi = terms.term_quad_pi;
  report.term_quad_beta = terms.term_quad_beta;
  report.rhs = report.term_d + report.term_quad_pi - report.term_quad_beta;
  report.holds = report.lhs >= report.rhs - 1e-9;

  report.density_ratio_gap.resize(mdp.n_states);
  report.value_shift.resize(mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) {
    const Scalar beta_prob = behavior.probs(s, star_actions[static_cast<std::size_t>(s)]);
    report.density_ratio_gap(s) = (1.0 - beta_prob) / beta_prob;
    report.value_shift(s) = star_value.v(s) - alpha * report.density_ratio_gap(s);
  }

  if (empirical != nullptr) {
    const QuadTerms emp = bound_terms(*empirical, pi_star, behavior, action_embedding,
                                      star_actions, alpha, eta);
    report.has_empirical = true;
    report.term_d_empirical = emp.term_d;
    report.term_quad_pi_empirical = emp.term_quad_pi;
    report.term_quad_beta_empirical = emp.term_quad_beta;
    report.rhs_empirical =
        emp.term_d + emp.term_quad_pi - emp.term_quad_beta;
    report.holds_empirical = report.lhs >= report.rhs_empirical - 1e-9;
  }
  return report;
}

std::string bound_report_text(const BoundReport& report) {
  std::ostringstream out;
  char buf[64];
  auto num = [&buf](Scalar v) {
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return std::string(buf);
  };
  out << "alpha: " << num(report.alpha) << "\n";
  out << "eta: " << num(report.eta) << "\n";
  out << "gamma: " << num(report.gamma) << "\n";
  out << "applicable: " << (report.applicable ? "true" : "false") << "\n";
  out << "j_pi_star: " << num(report.j_pi_star) << "\n";
  out << "j_behavior: " << num(report.j_behavior) << "\n";
  out << "lhs: " << num(report.lhs) << "\n";
  if (report.applicable) {
    out << "term_d: " << num(report.term_d) << "\n";
    out << "term_quad_pi: " << num(report.term_quad_pi) << "\n";
    out << "term_quad_beta: " << num(report.term_quad_beta) << "\n";
    out << "rhs: " << num(report.rhs) << "\n";
    out << "holds: " << (report.holds ? "true" : "false") << "\n";
  }
  if (report.has_empirical) {
    out << "term_d_empirical: " << num(report.term_d_empirical) << "\n";
    out << "term_quad_pi_empirical: " << num(report.term_quad_pi_empirical) << "\n";
    out << "term_quad_beta_empirical: " << num(report.term_quad_beta_empirical)
        << "\n";
    out << "rhs_empirical: " << num(report.rhs_empirical) << "\n";
    out << "holds_empirical: " << (report.holds_empirical ? "true" : "false") << "\n";
  }
  return out.str();
}

}  // namespace forler
