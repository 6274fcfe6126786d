//! Finite-difference verification of every learnable module's backward
//! pass. Each check perturbs the strongest-gradient entry of one parameter
//! tensor by +/- 1e-3 and compares the central difference of a fixed
//! random projection loss against the analytic gradient, all on inputs no
//! larger than a few thousand elements.

use ndarray::{Array5, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::absr::Absr;
use crate::decoder::Decoder;
use crate::encoder::ResBlock3d;
use crate::error::Result;
use crate::ffca::Ffca;
use crate::nn::{ConvBnRelu, Param, Phase, Tensors, Vol5};

pub const GRADCHECK_TOLERANCE: f64 = 1e-3;
const FD_STEP: f32 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub module: String,
    pub rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failed_modules(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| !e.passed)
            .map(|e| e.module.as_str())
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{:<16} max_rel_err {:>12.3e}  tol {:.0e}  {}\n",
                e.module,
                e.rel_err,
                e.tolerance,
                if e.passed { "PASS" } else { "FAIL" }
            ));
        }
        out.push_str(&format!(
            "gradcheck: {}\n",
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        out
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-7 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / denom
    }
}

fn argmax_abs(arr: &ArrayD<f32>) -> Vec<usize> {
    let ndim = arr.ndim();
    let mut best = (0.0f32, vec![0usize; ndim]);
    for (idx, v) in arr.indexed_iter() {
        if v.abs() > best.0 {
            best = (v.abs(), (0..ndim).map(|d| idx[d]).collect());
        }
    }
    best.1
}

fn random_vol(rng: &mut ChaCha8Rng, dims: (usize, usize, usize, usize, usize)) -> Vol5 {
    Array5::from_shape_fn(dims, |_| rng.gen_range(-1.0f32..1.0))
}

fn projected(out: &Vol5, proj: &Vol5) -> f64 {
    out.iter()
        .zip(proj.iter())
        .map(|(a, b)| *a as f64 * *b as f64)
        .sum()
}

fn check_absr(seed: u64, corrupt: bool) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x01);
    let mut absr = Absr::new(8, 8, None, seed ^ 0x02);
    let x = Array5::from_shape_fn((1, 2, 3, 8, 8), |_| rng.gen_range(0.0f32..1.0));
    let proj = random_vol(&mut rng, (1, 2, 3, 8, 8));
    let (_, cache) = absr.forward(&x)?;
    absr.backward(&cache, &proj);
    let mut grads = absr.mask.grad.clone();
    if corrupt {
        // test fixture: a deliberately wrong backward
        grads.mapv_inplace(|v| v * 1.01);
    }
    let absr_ref = std::cell::RefCell::new(absr);
    let err = {
        let mut a = absr_ref.borrow_mut();
        let idx = IxDyn(&argmax_abs(&grads));
        let analytic = grads[&idx] as f64;
        let orig = a.mask.value[&idx];
        a.mask.value[&idx] = orig + FD_STEP;
        let lp = projected(&a.forward(&x)?.0, &proj);
        a.mask.value[&idx] = orig - FD_STEP;
        let lm = projected(&a.forward(&x)?.0, &proj);
        a.mask.value[&idx] = orig;
        let numeric = (lp - lm) / (2.0 * FD_STEP as f64);
        rel_err(analytic, numeric)
    };
    Ok(err)
}

fn check_stem(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x03);
    let mut stem = ConvBnRelu::new(3, 4, (3, 3, 3), 1, &mut rng);
    let x = random_vol(&mut rng, (2, 2, 3, 8, 8));
    let proj = random_vol(&mut rng, (2, 2, 4, 8, 8));
    let (_, cache) = stem.forward(&x, Phase::Train);
    stem.backward(&cache, &proj);
    let grads = stem.conv.weight.grad.clone();
    let cell = std::cell::RefCell::new(stem);
    let loss = || {
        let mut s = cell.borrow_mut();
        let (y, _) = s.forward(&x, Phase::Train);
        projected(&y, &proj)
    };
    let idx = IxDyn(&argmax_abs(&grads));
    let analytic = grads[&idx] as f64;
    let orig = cell.borrow().conv.weight.value[&idx];
    cell.borrow_mut().conv.weight.value[&idx] = orig + FD_STEP;
    let lp = loss();
    cell.borrow_mut().conv.weight.value[&idx] = orig - FD_STEP;
    let lm = loss();
    cell.borrow_mut().conv.weight.value[&idx] = orig;
    let numeric = (lp - lm) / (2.0 * FD_STEP as f64);
    rel_err(analytic, numeric)
}

/// One resblock with a projection shortcut; checks conv1, conv2, the
/// projection, and one batch-norm affine parameter.
fn check_resblock(seed: u64) -> (f64, f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x04);
    let mut block = ResBlock3d::new(2, 4, 2, &mut rng);
    let x = random_vol(&mut rng, (2, 2, 2, 8, 8));
    let proj = random_vol(&mut rng, (2, 2, 4, 4, 4));
    let (_, cache) = block.forward(&x, Phase::Train);
    block.backward(&cache, &proj);
    let g1 = block.conv1.weight.grad.clone();
    let g2 = block.conv2.weight.grad.clone();
    let gp = block.proj.as_ref().expect("projection").weight.grad.clone();
    let gbn = block.bn1.gamma.grad.clone();
    let cell = std::cell::RefCell::new(block);
    let eval = || {
        let mut b = cell.borrow_mut();
        let (y, _) = b.forward(&x, Phase::Train);
        projected(&y, &proj)
    };
    let one = |get: &dyn Fn(&mut ResBlock3d) -> &mut Param, grads: &ArrayD<f32>| {
        let idx = IxDyn(&argmax_abs(grads));
        let analytic = grads[&idx] as f64;
        let orig = get(&mut cell.borrow_mut()).value[&idx];
        get(&mut cell.borrow_mut()).value[&idx] = orig + FD_STEP;
        let lp = eval();
        get(&mut cell.borrow_mut()).value[&idx] = orig - FD_STEP;
        let lm = eval();
        get(&mut cell.borrow_mut()).value[&idx] = orig;
        rel_err(analytic, (lp - lm) / (2.0 * FD_STEP as f64))
    };
    let e1 = one(&|b| &mut b.conv1.weight, &g1);
    let e2 = one(&|b| &mut b.conv2.weight, &g2);
    let ep = one(&|b| &mut b.proj.as_mut().unwrap().weight, &gp);
    let ebn = one(&|b| &mut b.bn1.gamma, &gbn);
    (e1, e2, ep, ebn)
}

/// LFU conv, GFU spectral kernel, and fuse conv inside one FFCA block.
fn check_ffca(seed: u64) -> Result<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05);
    let mut ffca = Ffca::new(4, 0.5, &mut rng)?;
    let z = random_vol(&mut rng, (1, 2, 4, 8, 8));
    let proj = random_vol(&mut rng, (1, 2, 4, 8, 8));
    let (_, cache) = ffca.forward(&z, Phase::Train)?;
    ffca.backward(&cache, &proj);
    let gl = ffca.lfu.conv.weight.grad.clone();
    let gg = ffca.gfu_conv.weight.grad.clone();
    let gf = ffca.fuse.weight.grad.clone();
    let cell = std::cell::RefCell::new(ffca);
    let eval = || -> Result<f64> {
        let mut f = cell.borrow_mut();
        let (y, _) = f.forward(&z, Phase::Train)?;
        Ok(projected(&y, &proj))
    };
    let one = |get: &dyn Fn(&mut Ffca) -> &mut Param, grads: &ArrayD<f32>| -> Result<f64> {
        let idx = IxDyn(&argmax_abs(grads));
        let analytic = grads[&idx] as f64;
        let orig = get(&mut cell.borrow_mut()).value[&idx];
        get(&mut cell.borrow_mut()).value[&idx] = orig + FD_STEP;
        let lp = eval()?;
        get(&mut cell.borrow_mut()).value[&idx] = orig - FD_STEP;
        let lm = eval()?;
        get(&mut cell.borrow_mut()).value[&idx] = orig;
        Ok(rel_err(analytic, (lp - lm) / (2.0 * FD_STEP as f64)))
    };
    let el = one(&|f| &mut f.lfu.conv.weight, &gl)?;
    let eg = one(&|f| &mut f.gfu_conv.weight, &gg)?;
    let ef = one(&|f| &mut f.fuse.weight, &gf)?;
    Ok((el, eg, ef))
}

fn check_decoder(seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x06);
    let mut dec = Decoder::new(&[4, 8], &mut rng);
    let pyramid = vec![
        random_vol(&mut rng, (1, 2, 4, 4, 4)),
        random_vol(&mut rng, (1, 2, 8, 2, 2)),
    ];
    let deep = pyramid[1].clone();
    let proj = random_vol(&mut rng, (1, 2, 1, 8, 8));
    let (_, cache) = dec.forward(&pyramid, &deep, Phase::Train)?;
    dec.backward(&cache, &proj);
    let gm = {
        let mut grads = None;
        dec.visit_params("", &mut |name, p| {
            if name == "merge0.conv.weight" {
                grads = Some(p.grad.clone());
            }
        });
        grads.expect("merge conv present")
    };
    let gh = {
        let mut grads = None;
        dec.visit_params("", &mut |name, p| {
            if name == "head.weight" {
                grads = Some(p.grad.clone());
            }
        });
        grads.expect("head present")
    };
    let cell = std::cell::RefCell::new(dec);
    let eval = || -> Result<f64> {
        let mut d = cell.borrow_mut();
        let (y, _) = d.forward(&pyramid, &deep, Phase::Train)?;
        Ok(projected(&y, &proj))
    };
    let one = |param_name: &str, grads: &ArrayD<f32>| -> Result<f64> {
        let idx = IxDyn(&argmax_abs(grads));
        let analytic = grads[&idx] as f64;
        let set = |cell: &std::cell::RefCell<Decoder>, v: f32| {
            cell.borrow_mut().visit_params("", &mut |name, p| {
                if name == param_name {
                    p.value[&idx] = v;
                }
            });
        };
        let get = |cell: &std::cell::RefCell<Decoder>| -> f32 {
            let mut v = 0.0;
            cell.borrow_mut().visit_params("", &mut |name, p| {
                if name == param_name {
                    v = p.value[&idx];
                }
            });
            v
        };
        let orig = get(&cell);
        set(&cell, orig + FD_STEP);
        let lp = eval()?;
        set(&cell, orig - FD_STEP);
        let lm = eval()?;
        set(&cell, orig);
        Ok(rel_err(analytic, (lp - lm) / (2.0 * FD_STEP as f64)))
    };
    let em = one("merge0.conv.weight", &gm)?;
    let eh = one("head.weight", &gh)?;
    Ok((em, eh))
}

/// Run the full finite-difference suite. `corrupt` injects a deliberately
/// wrong analytic gradient into the named module (a negative-control test
/// fixture); pass `None` for real checks.
pub fn run_gradcheck_with_corruption(seed: u64, corrupt: Option<&str>) -> Result<GradCheckReport> {
    let mut entries = Vec::new();
    let mut push = |module: &str, err: f64| {
        entries.push(GradCheckEntry {
            module: module.to_string(),
            rel_err: err,
            tolerance: GRADCHECK_TOLERANCE,
            passed: err < GRADCHECK_TOLERANCE,
        });
    };
    push("absr", check_absr(seed, corrupt == Some("absr"))?);
    push("stem_conv", check_stem(seed));
    let (e1, e2, ep, ebn) = check_resblock(seed);
    push("resblock_conv1", e1);
    push("resblock_conv2", e2);
    push("resblock_proj", ep);
    push("resblock_bn", ebn);
    let (el, eg, ef) = check_ffca(seed)?;
    push("lfu_conv", el);
    push("gfu_spectral", eg);
    push("ffca_fuse", ef);
    let (em, eh) = check_decoder(seed)?;
    push("decoder_merge", em);
    push("decoder_head", eh);
    Ok(GradCheckReport { entries })
}

pub fn run_gradcheck(seed: u64) -> Result<GradCheckReport> {
    run_gradcheck_with_corruption(seed, None)
}
