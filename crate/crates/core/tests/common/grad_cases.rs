//! Gradient-check cases run by both the gradient and acceptance suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sted::dblrnet::{ddfe, group_warp, DblrNet, DblrNetConfig};
use sted::losses;
use sted::nn::ParamStore;
use sted::perceptual::{PerceptualConfig, PerceptualExtractor};
use sted::tensor::Tensor;

use super::off_grid;

fn random(r: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| r.random_range(lo..hi))
}

pub fn warp() -> (usize, f64) {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let src = random(&mut r, [2, 3, 5, 9], -1.0, 1.0);
    let disp = off_grid(random(&mut r, [2, 1, 5, 9], -3.0, 3.0));
    let target = random(&mut r, [2, 3, 5, 9], -1.0, 1.0);
    super::check(vec![src, disp], ParamStore::new(), 150, 2, |g, _, v| {
        let w = g.warp(v[0], v[1]).unwrap();
        let t = g.input(target.clone());
        g.mean_square(g.sub(w, t).unwrap())
    })
}

pub fn grouped_warp() -> (usize, f64) {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let f = random(&mut r, [1, 6, 4, 8], -1.0, 1.0);
    let d = off_grid(random(&mut r, [1, 3, 4, 8], -2.5, 2.5));
    let target = random(&mut r, [1, 6, 4, 8], -1.0, 1.0);
    super::check(vec![f, d], ParamStore::new(), 150, 4, |g, _, v| {
        let w = group_warp(g, v[0], v[1]).unwrap();
        let t = g.input(target.clone());
        g.mean_square(g.sub(w, t).unwrap())
    })
}

pub fn dblr_loss() -> (usize, f64) {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let pred = random(&mut r, [2, 6, 4, 5], 0.0, 1.0);
    let gt = random(&mut r, [2, 6, 4, 5], 0.0, 1.0);
    super::check(vec![pred, gt], ParamStore::new(), 120, 6, |g, _, v| losses::dblr(g, v[0], v[1]).unwrap())
}

pub fn perc_loss() -> (usize, f64) {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let ex = PerceptualExtractor::<f64>::new(PerceptualConfig::desk(3, 8)).unwrap();
    let pred = random(&mut r, [1, 6, 8, 8], 0.0, 1.0);
    let gt = random(&mut r, [1, 6, 8, 8], 0.0, 1.0);
    super::check(vec![pred, gt], ParamStore::new(), 150, 8, |g, _, v| {
        losses::perc(g, &ex, v[0], v[1], 3).unwrap()
    })
}

pub fn tv_loss() -> (usize, f64) {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    // distinct neighbours keep every difference away from zero
    let d = Tensor::from_fn([2, 1, 8, 8], |_, _, y, x| (x * 7 + y * 3) as f64 * 0.37 % 2.0 + r.random_range(0.0..0.05));
    super::check(vec![d], ParamStore::new(), 120, 10, |g, _, v| losses::tv(g, v[0]))
}

pub fn cascade_stage() -> (usize, f64) {
    let cfg = DblrNetConfig {
        channels: 8,
        stages: 1,
        groups: 2,
        frames: 2,
        out_channels: 1,
        bins: 2,
        growth: 4,
        dense_layers: 2,
        ..Default::default()
    };
    let net = DblrNet::new(cfg.clone()).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let mut p = ParamStore::<f64>::new();
    net.init(&mut p, &mut r);
    // a nonzero disparity head exercises the warp path
    for (name, t) in p.iter_mut() {
        if name.starts_with("dblr.bde.2") {
            *t = random(&mut r, t.shape(), -0.2, 0.2);
        }
    }
    let keep: Vec<String> = p
        .names()
        .filter(|n| n.starts_with("dblr.ddfe0") || n.starts_with("dblr.bde") || n.starts_with("dblr.aff"))
        .cloned()
        .collect();
    let mut stage = ParamStore::new();
    for n in &keep {
        stage.insert(n.clone(), p.get(n).unwrap().clone());
    }
    let fb = random(&mut r, [1, 8, 6, 6], -1.0, 1.0);
    let fe = random(&mut r, [1, 8, 6, 6], -1.0, 1.0);
    let wb = random(&mut r, [1, 8, 6, 6], -1.0, 1.0);
    let we = random(&mut r, [1, 8, 6, 6], -1.0, 1.0);
    let (rb, re) = net.rdb(0);
    super::check(vec![fb, fe], stage, 200, 12, |g, p, v| {
        let s = ddfe(g, p, &cfg, &net.shared, rb, re, v[0], v[1]).unwrap();
        let a = g.mul(s.f_blur, g.input(wb.clone())).unwrap();
        let b = g.mul(s.f_event, g.input(we.clone())).unwrap();
        g.add(g.mean_square(a), g.mean_square(b)).unwrap()
    })
}
