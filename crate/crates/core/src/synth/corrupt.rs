use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{se3_exp, SceneFlowField, Se3, Se3Field, Twist};

/// How a region of a baseline estimate is damaged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum Corruption {
    /// Independent Gaussian perturbation per pixel. For SE(3) fields the
    /// perturbation is a twist with the given standard deviations (meters,
    /// radians) applied on the left; for flows `translation` is in pixels.
    Random { translation: f64, rotation: f64 },
    /// Identity transform, or zero flow.
    Zero,
    /// Fixed twist applied on the left, or `twist[..3]` added to `(u, v, delta_d)`.
    Bias { twist: [f64; 6] },
}

fn check_region(region: &[bool], n: usize) -> Result<()> {
    if region.len() != n {
        return Err(Error::shape(format!("region has {} pixels, field has {n}", region.len())));
    }
    Ok(())
}

fn normal(std: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, std).map_err(|_| Error::usage(format!("invalid corruption scale {std}")))
}

pub fn corrupt_se3_region(field: &Se3Field, region: &[bool], mode: &Corruption, seed: u64) -> Result<Se3Field> {
    check_region(region, field.transforms.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = field.clone();
    let bias = match mode {
        Corruption::Bias { twist } => Some(se3_exp(&Twist::from_slice(twist))),
        _ => None,
    };
    let noise = match *mode {
        Corruption::Random { translation, rotation } => Some((normal(translation)?, normal(rotation)?)),
        _ => None,
    };
    for (t, _) in out.transforms.iter_mut().zip(region).filter(|(_, &r)| r) {
        *t = match (mode, &bias, &noise) {
            (Corruption::Zero, _, _) => Se3::identity(),
            (_, Some(b), _) => b.compose(t),
            (_, _, Some((nt, nr))) => {
                let mut xi = [0.0; 6];
                for (i, v) in xi.iter_mut().enumerate() {
                    *v = if i < 3 { nt.sample(&mut rng) } else { nr.sample(&mut rng) };
                }
                se3_exp(&Twist::from_slice(&xi)).compose(t)
            }
            _ => unreachable!("every mode is handled"),
        };
    }
    Ok(out)
}

pub fn corrupt_flow_region(flow: &SceneFlowField, region: &[bool], mode: &Corruption, seed: u64) -> Result<SceneFlowField> {
    check_region(region, flow.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = flow.clone();
    let noise = match *mode {
        Corruption::Random { translation, .. } => Some(normal(translation)?),
        _ => None,
    };
    for i in (0..flow.len()).filter(|&i| region[i]) {
        let comps = [&mut out.u[i], &mut out.v[i], &mut out.delta_d[i]];
        for (k, c) in comps.into_iter().enumerate() {
            match mode {
                Corruption::Zero => *c = 0.0,
                Corruption::Bias { twist } => *c += twist[k],
                Corruption::Random { .. } => *c += noise.as_ref().expect("random mode").sample(&mut rng),
            }
        }
    }
    Ok(out)
}
