use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rmdp_core::instance::bundled;
use rmdp_core::mdp::{Mdp, Policy};
use rmdp_core::numerics::dot;

const TRAJECTORIES: usize = 100_000;
const HORIZON: usize = 200;

fn draw(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

struct Rollouts {
    returns: Vec<f64>,
    /// Discounted visit count of each (s, a) per trajectory, flattened `s·|A| + a`.
    visits: Vec<Vec<f64>>,
}

fn simulate(mdp: &Mdp, policy: &Policy, seed: u64) -> Rollouts {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let na = mdp.n_actions;
    let mut returns = Vec::with_capacity(TRAJECTORIES);
    let mut visits = vec![Vec::with_capacity(TRAJECTORIES); mdp.n_states * na];
    let mut counts = vec![0.0; mdp.n_states * na];
    for _ in 0..TRAJECTORIES {
        counts.iter_mut().for_each(|c| *c = 0.0);
        let mut s = draw(&mdp.initial, &mut rng);
        let (mut total, mut weight) = (0.0, 1.0);
        for _ in 0..HORIZON {
            let a = draw(&policy.probs[s], &mut rng);
            total += weight * mdp.rewards[s][a];
            counts[s * na + a] += weight;
            weight *= mdp.discount;
            s = draw(&mdp.transitions[s][a], &mut rng);
        }
        returns.push(total);
        for (v, c) in visits.iter_mut().zip(&counts) {
            v.push(*c);
        }
    }
    Rollouts { returns, visits }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn rollout_returns_match_policy_evaluation() {
    let mdp = bundled("example1").unwrap().rmdp.base;
    for (k, policy) in [Policy::uniform(2, 3), Policy::deterministic(&[0, 2], 3)].iter().enumerate() {
        let exact = dot(&mdp.initial, &mdp.policy_evaluation(policy).unwrap());
        let (mean, se) = mean_and_se(&simulate(&mdp, policy, 11 + k as u64).returns);
        assert!((mean - exact).abs() <= 3.0 * se, "policy {k}: estimate {mean} ± {se}, exact {exact}");
    }
}

#[test]
fn uniform_occupancy_matches_visit_counts() {
    let mdp = bundled("example1").unwrap().rmdp.base;
    let policy = Policy::uniform(2, 3);
    let occupancy = mdp.occupancy_of_policy(&policy).unwrap();
    let rollouts = simulate(&mdp, &policy, 21);
    for s in 0..2 {
        for a in 0..3 {
            let (mean, se) = mean_and_se(&rollouts.visits[s * 3 + a]);
            let exact = occupancy[s][a];
            assert!((mean - exact).abs() <= 3.0 * se, "({s},{a}): estimate {mean} ± {se}, exact {exact}");
        }
    }
    let mass: f64 = occupancy.iter().flatten().sum();
    assert!((mass - 1.0 / (1.0 - mdp.discount)).abs() < 1e-9);
}
