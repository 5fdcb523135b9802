#![allow(dead_code)]
//! Reference implementations shared by the integration tests.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sted::autograd::{Graph, Var};
use sted::events::Event;
use sted::nn::ParamStore;
use sted::tensor::Tensor;

pub mod grad_cases;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL: f64 = 1e-4;

/// Bilinear sample along x with zero outside the row.
pub fn sample_row(row: &[f64], p: f64) -> f64 {
    let get = |i: i64| if i >= 0 && (i as usize) < row.len() { row[i as usize] } else { 0.0 };
    let x0 = p.floor();
    let a = p - x0;
    (1.0 - a) * get(x0 as i64) + a * get(x0 as i64 + 1)
}

pub fn warp_oracle(src: &Tensor<f64>, disp: &Tensor<f64>) -> Tensor<f64> {
    let [_, c, _, w] = src.shape();
    let groups = disp.c();
    let per = c / groups;
    Tensor::from_fn(src.shape(), |n, ch, y, x| {
        let row: Vec<f64> = (0..w).map(|i| src.at(n, ch, y, i)).collect();
        sample_row(&row, x as f64 - disp.at(n, ch / per, y, x))
    })
}

/// Steps every microsecond, interpolating log intensity linearly between
/// frames and firing whenever the next level above or below is reached.
pub fn simulate_oracle(logs: &[Vec<f64>], ts: &[u64], w: usize, c: f64) -> Vec<Event> {
    let mut out = Vec::new();
    for pix in 0..logs[0].len() {
        let base = logs[0][pix];
        let mut k = 0i64;
        for f in 1..logs.len() {
            let (l0, l1) = (logs[f - 1][pix], logs[f][pix]);
            for t in ts[f - 1] + 1..=ts[f] {
                let l = l0 + (l1 - l0) * (t - ts[f - 1]) as f64 / (ts[f] - ts[f - 1]) as f64;
                while l >= base + (k + 1) as f64 * c - 1e-9 && l1 > l0 {
                    k += 1;
                    out.push(Event { t, x: (pix % w) as u16, y: (pix / w) as u16, p: 1 });
                }
                while l <= base + (k - 1) as f64 * c + 1e-9 && l1 < l0 {
                    k -= 1;
                    out.push(Event { t, x: (pix % w) as u16, y: (pix / w) as u16, p: -1 });
                }
            }
        }
    }
    out.sort_by_key(|e| (e.t, e.y, e.x));
    out
}

/// Compares analytic and numeric derivatives on `coords` randomly chosen
/// entries spread over `inputs` (graph leaves) and the tensors of `params`.
pub fn check(
    inputs: Vec<Tensor<f64>>,
    params: ParamStore<f64>,
    coords: usize,
    seed: u64,
    f: impl Fn(&Graph<f64>, &ParamStore<f64>, &[Var]) -> Var,
) -> (usize, f64) {
    let run = |inputs: &[Tensor<f64>], params: &ParamStore<f64>| -> f64 {
        let g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        g.scalar(f(&g, params, &vars))
    };
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&g, &params, &vars);
    let grads = g.backward(loss).unwrap();
    let named = grads.named(&g);

    // (input index or param name, flat offset, analytic)
    let mut slots: Vec<(Result<usize, String>, usize, f64)> = Vec::new();
    for (i, (v, t)) in vars.iter().zip(&inputs).enumerate() {
        let gr = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        slots.extend((0..t.numel()).map(|k| (Ok(i), k, gr.data()[k])));
    }
    for (name, t) in params.iter() {
        let gr = named.get(name).unwrap_or_else(|| panic!("no gradient for {name}"));
        slots.extend((0..t.numel()).map(|k| (Err(name.clone()), k, gr.data()[k])));
    }
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let picked = sample(&mut r, slots.len(), coords.min(slots.len()));
    let mut worst = 0.0f64;
    for idx in picked.iter() {
        let (which, k, analytic) = &slots[idx];
        let eval = |delta: f64| {
            let mut ins = inputs.clone();
            let mut ps = params.clone();
            match which {
                Ok(i) => ins[*i].data_mut()[*k] += delta,
                Err(name) => ps.get_mut(name).unwrap().data_mut()[*k] += delta,
            }
            run(&ins, &ps)
        };
        let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
        let err = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        assert!(
            err <= FD_REL * scale + 1e-9,
            "{which:?}[{k}]: analytic {analytic} vs numeric {numeric}"
        );
        if scale > 1e-8 {
            worst = worst.max(err / scale);
        }
    }
    assert!(picked.len() >= 100.min(slots.len()));
    (picked.len(), worst)
}

/// Pulls values away from integer sample positions where bilinear
/// interpolation has kinks.
pub fn off_grid(t: Tensor<f64>) -> Tensor<f64> {
    t.map(|v| {
        let f = v - v.floor();
        if f < 0.05 || f > 0.95 {
            v.floor() + 0.5
        } else {
            v
        }
    })
}

