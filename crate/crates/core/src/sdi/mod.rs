//! Stochastic defect injection: slice-count expansion, synthetic
//! macular-hole labels, and matching image synthesis.

mod synth;

pub use synth::{gaussian_blur_2d, synthesize_image};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{face_neighbors, Grid3};
use crate::metrics::edt_squared;
use crate::volume_io::{LabeledVolume, Spacing, MACULAR_EDEMA, MACULAR_HOLE, RETINA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Only the injected region becomes a hole.
    #[default]
    Isolated,
    /// Edema connected to the injected region also becomes hole.
    Comprehensive,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isolated" => Ok(Strategy::Isolated),
            "comprehensive" => Ok(Strategy::Comprehensive),
            other => Err(Error::InvalidArgument(format!("unknown injection strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdiConfig {
    pub strategy: Strategy,
    pub strength_min: f64,
    pub strength_max: f64,
    /// Radius in voxels at strength 1.
    pub base_radius: f64,
    /// Lateral (W) semi-axis as a fraction of the axial (H) one.
    pub lateral_ratio: f64,
    pub margin: usize,
    /// Max en-face offset of the centroid from the retina's center of mass.
    pub jitter: f64,
    pub target_slices: usize,
    pub blur_sigma: f64,
}

impl Default for SdiConfig {
    fn default() -> Self {
        SdiConfig {
            strategy: Strategy::Isolated,
            strength_min: 0.5,
            strength_max: 1.5,
            base_radius: 8.0,
            lateral_ratio: 0.75,
            margin: 15,
            jitter: 4.0,
            target_slices: 96,
            blur_sigma: 1.0,
        }
    }
}

impl SdiConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.strength_min.is_finite()
            && self.strength_max.is_finite()
            && 0.0 <= self.strength_min
            && self.strength_min <= self.strength_max
            && self.base_radius >= 0.0
            && self.lateral_ratio >= 0.0
            && self.jitter >= 0.0
            && self.blur_sigma >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid injection settings: {self:?}")));
        }
        Ok(())
    }
}

/// Geometry of one injection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub strategy: Strategy,
    pub distortion_strength: f64,
    /// `(d, h, w)` voxel position of the defect center.
    pub centroid: [usize; 3],
    /// Per-slice `(axial, lateral)` semi-axes in voxels; zero off the defect.
    pub radii: Vec<(f64, f64)>,
    pub isolation_margin: usize,
    pub rng_seed: u64,
}

impl InjectionSpec {
    fn validate(&self, dims: [usize; 3]) -> Result<()> {
        if self.radii.len() != dims[0] {
            return Err(Error::InvalidArgument(format!(
                "{} slice radii for {} slices",
                self.radii.len(),
                dims[0]
            )));
        }
        if self.radii.iter().any(|&(a, b)| !(a >= 0.0 && b >= 0.0)) {
            return Err(Error::InvalidArgument("negative injection radius".into()));
        }
        if (0..3).any(|i| self.centroid[i] >= dims[i]) {
            return Err(Error::InvalidArgument(format!(
                "centroid {:?} outside volume {dims:?}",
                self.centroid
            )));
        }
        Ok(())
    }

    /// Voxels inside the per-slice ellipses.
    pub fn region(&self, dims: [usize; 3]) -> Result<Grid3<bool>> {
        self.validate(dims)?;
        let [_, ch, cw] = self.centroid;
        Ok(Grid3::from_fn(dims, |d, h, w| {
            let (ry, rx) = self.radii[d];
            if ry <= 0.0 || rx <= 0.0 {
                return false;
            }
            let y = (h as f64 - ch as f64) / ry;
            let x = (w as f64 - cw as f64) / rx;
            y * y + x * x <= 1.0
        }))
    }
}

/// Labels and masks after injection.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionResult {
    pub volume: LabeledVolume,
    /// Voxels set to the hole class by the ellipse geometry.
    pub injected_mask: Grid3<bool>,
    /// Edema voxels outside the region relabeled as hole through connectivity.
    pub relabeled_edema_mask: Grid3<bool>,
}

/// Linear interpolation along the slice axis up to `target_slices`, with
/// first and last slices kept in place; labels come from the nearest source
/// slice.
pub fn expand_sequence(v: &LabeledVolume, target_slices: usize) -> Result<LabeledVolume> {
    let [dn, hn, wn] = v.dims();
    if dn < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 slices to expand, got {dn}")));
    }
    if target_slices < dn {
        return Err(Error::InvalidArgument(format!(
            "target of {target_slices} slices is below the source's {dn}"
        )));
    }
    if target_slices == dn {
        return Ok(v.clone());
    }
    let scale = (dn - 1) as f64 / (target_slices - 1) as f64;
    let plane = hn * wn;
    let mut image = Vec::with_capacity(target_slices * plane);
    let mut labels = Vec::with_capacity(target_slices * plane);
    for t in 0..target_slices {
        let pos = t as f64 * scale;
        let lo = (pos.floor() as usize).min(dn - 1);
        let hi = (lo + 1).min(dn - 1);
        let f = (pos - lo as f64) as f32;
        let (a, b) = (v.image().slice(lo), v.image().slice(hi));
        image.extend(a.iter().zip(b).map(|(&x, &y)| (x + (y - x) * f).clamp(0.0, 1.0)));
        let nearest = (pos.round() as usize).min(dn - 1);
        labels.extend_from_slice(v.labels().slice(nearest));
    }
    let dims = [target_slices, hn, wn];
    let sp = v.spacing();
    let spacing = Spacing::new(sp.d * scale, sp.h, sp.w)?;
    LabeledVolume::new(
        Grid3::from_vec(dims, image)?,
        Grid3::from_vec(dims, labels)?,
        spacing,
        v.meta.clone(),
    )
}

/// Draws a defect around the retina's en-face center of mass.
pub fn sample_injection_spec(v: &LabeledVolume, cfg: &SdiConfig, seed: u64) -> Result<InjectionSpec> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = v.labels();
    let [dn, hn, wn] = v.dims();
    let retina: Vec<[usize; 3]> = labels
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == RETINA)
        .map(|(i, _)| labels.coords(i))
        .collect();
    if retina.is_empty() {
        return Err(Error::NoRetina);
    }
    let n = retina.len() as f64;
    let md = retina.iter().map(|p| p[0] as f64).sum::<f64>() / n;
    let mw = retina.iter().map(|p| p[2] as f64).sum::<f64>() / n;

    let strength = if cfg.strength_max > cfg.strength_min {
        rng.random_range(cfg.strength_min..=cfg.strength_max)
    } else {
        cfg.strength_min
    };
    let mut jitter = || {
        if cfg.jitter > 0.0 {
            rng.random_range(-cfg.jitter..=cfg.jitter)
        } else {
            0.0
        }
    };
    let (jd, jw) = (jitter(), jitter());
    let td = (md + jd).round().clamp(0.0, (dn - 1) as f64);
    let tw = (mw + jw).round().clamp(0.0, (wn - 1) as f64);

    // Nearest en-face retina column, then the middle retina voxel in it.
    let &[cd, _, cw] = retina
        .iter()
        .min_by(|a, b| {
            let da = (a[0] as f64 - td).powi(2) + (a[2] as f64 - tw).powi(2);
            let db = (b[0] as f64 - td).powi(2) + (b[2] as f64 - tw).powi(2);
            da.total_cmp(&db)
        })
        .expect("retina is non-empty");
    let column: Vec<usize> = (0..hn).filter(|&h| labels[[cd, h, cw]] == RETINA).collect();
    let ch = column[column.len() / 2];

    let axial = cfg.base_radius * strength;
    let lateral = axial * cfg.lateral_ratio;
    let extent = axial;
    let radii = (0..dn)
        .map(|d| {
            if extent <= 0.0 {
                return (0.0, 0.0);
            }
            let t = (d as f64 - cd as f64) / extent;
            let taper = (1.0 - t * t).max(0.0).sqrt();
            (axial * taper, lateral * taper)
        })
        .collect();
    Ok(InjectionSpec {
        strategy: cfg.strategy,
        distortion_strength: strength,
        centroid: [cd, ch, cw],
        radii,
        isolation_margin: cfg.margin,
        rng_seed: seed,
    })
}

/// Voxels outside `region` within Euclidean distance `margin` of it.
pub fn isolation_ring(region: &Grid3<bool>, margin: usize) -> Grid3<bool> {
    let dims = region.dims();
    let d2 = edt_squared(region.data(), dims, Spacing::isotropic(1.0).expect("unit spacing"));
    let m2 = (margin * margin) as f64;
    let data = region
        .data()
        .iter()
        .zip(&d2)
        .map(|(&inside, &d)| !inside && d <= m2)
        .collect();
    Grid3::from_vec(dims, data).expect("same dims")
}

/// Replaces edema inside `ring` with the most common non-edema label among
/// each voxel's 26 neighbors, sweeping until no voxel changes. Sweeps read
/// the previous sweep's labels, so the result does not depend on scan order.
fn clear_ring_edema(labels: &mut Grid3<u8>, ring: &Grid3<bool>) {
    let mut pending: Vec<usize> = (0..labels.len())
        .filter(|&i| ring.data()[i] && labels.data()[i] == MACULAR_EDEMA)
        .collect();
    while !pending.is_empty() {
        let mut updates = Vec::new();
        let mut still = Vec::new();
        for &i in &pending {
            let [d, h, w] = labels.coords(i);
            let mut votes = [0usize; 256];
            for dd in -1isize..=1 {
                for dh in -1isize..=1 {
                    for dw in -1isize..=1 {
                        let (nd, nh, nw) = (d as isize + dd, h as isize + dh, w as isize + dw);
                        if (dd, dh, dw) == (0, 0, 0) || !labels.in_bounds(nd, nh, nw) {
                            continue;
                        }
                        let l = labels[[nd as usize, nh as usize, nw as usize]];
                        if l != MACULAR_EDEMA {
                            votes[l as usize] += 1;
                        }
                    }
                }
            }
            let best = (0..256).filter(|&c| votes[c] > 0).max_by_key(|&c| (votes[c], std::cmp::Reverse(c)));
            match best {
                Some(c) => updates.push((i, c as u8)),
                None => still.push(i),
            }
        }
        if updates.is_empty() {
            // Edema pockets with no other-class neighbor at all.
            for i in still {
                labels.data_mut()[i] = RETINA;
            }
            break;
        }
        for (i, c) in updates {
            labels.data_mut()[i] = c;
        }
        pending = still;
    }
}

/// Edema voxels 6-connected through edema to `region` (seeded by edema voxels
/// inside or face-adjacent to it), excluding the region itself.
pub fn connected_edema(labels: &Grid3<u8>, region: &Grid3<bool>) -> Grid3<bool> {
    let dims = labels.dims();
    let mut seen = vec![false; labels.len()];
    let mut stack: Vec<[usize; 3]> = Vec::new();
    for i in 0..labels.len() {
        if !region.data()[i] {
            continue;
        }
        let p = labels.coords(i);
        for q in std::iter::once(p).chain(face_neighbors(dims, p)) {
            let j = labels.index(q[0], q[1], q[2]);
            if labels.data()[j] == MACULAR_EDEMA && !seen[j] {
                seen[j] = true;
                stack.push(q);
            }
        }
    }
    // depth-first traversal through edema
    while let Some(p) = stack.pop() {
        for q in face_neighbors(dims, p) {
            let j = labels.index(q[0], q[1], q[2]);
            if labels.data()[j] == MACULAR_EDEMA && !seen[j] {
                seen[j] = true;
                stack.push(q);
            }
        }
    }
    let data = seen.iter().zip(region.data()).map(|(&s, &r)| s && !r).collect();
    Grid3::from_vec(dims, data).expect("same dims")
}

fn inject_with(v: &LabeledVolume, spec: &InjectionSpec, comprehensive: bool) -> Result<InjectionResult> {
    let dims = v.dims();
    let region = spec.region(dims)?;
    if !region.data().contains(&true) {
        return Err(Error::EmptyInjection);
    }
    let mut labels = v.labels().clone();
    let relabeled = if comprehensive {
        connected_edema(&labels, &region)
    } else {
        Grid3::filled(dims, false)
    };
    for (l, &r) in labels.data_mut().iter_mut().zip(relabeled.data()) {
        if r {
            *l = MACULAR_HOLE;
        }
    }
    let ring = isolation_ring(&region, spec.isolation_margin);
    clear_ring_edema(&mut labels, &ring);
    for (l, &r) in labels.data_mut().iter_mut().zip(region.data()) {
        if r {
            *l = MACULAR_HOLE;
        }
    }
    Ok(InjectionResult {
        volume: v.with_labels(labels)?,
        injected_mask: region,
        relabeled_edema_mask: relabeled,
    })
}

/// Marks the ellipse region as hole and clears edema in the isolation ring.
pub fn inject_isolated(v: &LabeledVolume, spec: &InjectionSpec) -> Result<InjectionResult> {
    if spec.strategy != Strategy::Isolated {
        return Err(Error::InvalidArgument("spec is not for isolated injection".into()));
    }
    inject_with(v, spec, false)
}

/// As [`inject_isolated`], after first turning every edema component that
/// touches the region into hole.
pub fn inject_comprehensive(v: &LabeledVolume, spec: &InjectionSpec) -> Result<InjectionResult> {
    if spec.strategy != Strategy::Comprehensive {
        return Err(Error::InvalidArgument("spec is not for comprehensive injection".into()));
    }
    inject_with(v, spec, true)
}

pub fn inject(v: &LabeledVolume, spec: &InjectionSpec) -> Result<InjectionResult> {
    match spec.strategy {
        Strategy::Isolated => inject_isolated(v, spec),
        Strategy::Comprehensive => inject_comprehensive(v, spec),
    }
}

/// Expansion, injection and image synthesis in one go.
pub fn augment_volume(v: &LabeledVolume, cfg: &SdiConfig, seed: u64) -> Result<(LabeledVolume, InjectionSpec)> {
    let expanded = expand_sequence(v, cfg.target_slices.max(v.dims()[0]))?;
    let spec = sample_injection_spec(&expanded, cfg, seed)?;
    let result = inject(&expanded, &spec)?;
    let out = synthesize_image(&result, cfg.blur_sigma)?;
    Ok((out, spec))
}
