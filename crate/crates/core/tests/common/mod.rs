//! Shared helpers for the integration and acceptance suites.
#![allow(dead_code)] // each test target uses a different subset

use lbc_core::env::DeterministicMdp;
use lbc_core::fqi::LinearGreedyPolicy;
use lbc_core::nalgebra::DVector;

/// One open-loop policy per action sequence. With orthonormal per-layer
/// features, θ_h = Σ_x φ_h(x, σ_h) scores 1 exactly for action σ_h and 0
/// otherwise, so the greedy policy plays the sequence regardless of state.
/// Together the A^H sequences cover every reachable (state, action) pair at
/// every layer.
pub fn open_loop_cover(mdp: &DeterministicMdp) -> Vec<Vec<LinearGreedyPolicy>> {
    let a = mdp.num_actions();
    let h = mdp.horizon();
    let mut list = Vec::new();
    for code in 0..a.pow(h as u32) {
        let mut c = code;
        let params: Vec<DVector<f64>> = (0..h)
            .map(|layer| {
                let act = c % a;
                c /= a;
                let mut t = DVector::zeros(mdp.dim());
                for x in 0..mdp.num_states() {
                    t += mdp.feature(layer, x, act);
                }
                t
            })
            .collect();
        list.push(LinearGreedyPolicy::new(params));
    }
    vec![list; h]
}

/// Exact E^π[φ_h] for an explicit state-action map policy, by enumeration.
pub fn exact_mean_feature_of_map(
    mdp: &DeterministicMdp,
    layer: usize,
    action_map: &[Vec<usize>],
) -> DVector<f64> {
    let mut mean = DVector::zeros(mdp.dim());
    for (x0, &p) in mdp.initial_dist().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let mut x = x0;
        for l in 0..layer {
            x = mdp.next_state(l, x, action_map[l][x]);
        }
        mean += mdp.feature(layer, x, action_map[layer][x]) * p;
    }
    mean
}

/// Enumerates every deterministic Markov policy as per-layer action maps.
/// Feasible only at tiny scale (A^(S·H) total).
pub fn enumerate_markov_policies(mdp: &DeterministicMdp) -> Vec<Vec<Vec<usize>>> {
    let s = mdp.num_states();
    let a = mdp.num_actions();
    let h = mdp.horizon();
    let per_layer = a.pow(s as u32);
    let total = per_layer.pow(h as u32);
    let mut policies = Vec::with_capacity(total);
    for code in 0..total {
        let mut c = code;
        let mut maps = Vec::with_capacity(h);
        for _ in 0..h {
            let mut layer_code = c % per_layer;
            c /= per_layer;
            let mut map = Vec::with_capacity(s);
            for _ in 0..s {
                map.push(layer_code % a);
                layer_code /= a;
            }
            maps.push(map);
        }
        policies.push(maps);
    }
    policies
}

/// Sample mean and (unbiased) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64
    } else {
        0.0
    };
    (mean, var.sqrt())
}
