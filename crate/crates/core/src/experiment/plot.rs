//! Uncertainty landscapes for one- and two-dimensional inputs. Every image
//! is written next to a CSV of the values it was drawn from.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{load_models, write, Experiment};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::expfam::Predictive;
use crate::model::{uncertainties, Predictor};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSpec {
    /// Grid points per axis.
    pub resolution: usize,
    /// Padding around the training data as a fraction of its range.
    pub margin: f64,
    /// Explicit `[[lo, hi], ...]` per input dimension in raw units.
    pub bounds: Option<Vec<[f64; 2]>>,
    /// Central probability of the predictive band in 1-D plots.
    pub band: f64,
}

impl Default for PlotSpec {
    fn default() -> Self {
        PlotSpec {
            resolution: 100,
            margin: 1.0,
            bounds: None,
            band: 0.95,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlotOutput {
    pub files: Vec<PathBuf>,
    pub columns: Vec<String>,
    /// One row per grid point, in raw input units.
    pub rows: Vec<Vec<f64>>,
}

impl PlotOutput {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

fn quantile(p: &Predictive, q: f64) -> Result<f64> {
    match p {
        &Predictive::StudentT { loc, scale, .. } => {
            let (mut lo, mut hi) = (loc - scale, loc + scale);
            while p.cdf(lo)? > q {
                lo = loc - 2.0 * (loc - lo);
            }
            while p.cdf(hi)? < q {
                hi = loc + 2.0 * (hi - loc);
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if p.cdf(mid)? < q {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(0.5 * (lo + hi))
        }
        Predictive::NegBinomial { .. } => {
            // Smallest k with F(k) >= q, by doubling then bisection.
            let mut hi = 1.0;
            while p.cdf(hi)? < q {
                hi *= 2.0;
            }
            let mut lo = 0.0;
            if p.cdf(0.0)? >= q {
                return Ok(0.0);
            }
            while hi - lo > 1.0 {
                let mid = ((lo + hi) / 2.0_f64).floor();
                if p.cdf(mid)? < q {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(hi)
        }
        Predictive::Categorical { .. } => Ok(p.point()),
    }
}

fn viridis(t: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (STOPS.len() - 1) as f64;
    let k = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - k as f64;
    let c = |i: usize| (STOPS[k][i] + f * (STOPS[k + 1][i] - STOPS[k][i])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let finite = v.iter().filter(|x| x.is_finite());
    let lo = finite.clone().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    v.iter().map(|x| (x - lo) / span).collect()
}

fn dot(img: &mut RgbImage, x: i64, y: i64, r: i64, color: Rgb<u8>) {
    for dx in -r..=r {
        for dy in -r..=r {
            let (px, py) = (x + dx, y + dy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
    }
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })?;
    write(path, bytes)
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1).max(1) as f64).collect()
}

/// Evaluates a checkpoint over a grid spanning the training inputs and
/// writes CSV values plus PNG renderings under `out/plot`.
pub fn plot(exp: &Experiment, checkpoint: &Path, out: &Path, exec: Exec) -> Result<PlotOutput> {
    let ds = exp.build_dataset()?;
    let dim = ds.input_dim();
    if dim > 2 {
        return Err(Error::Config(format!("plots need at most 2 input features, `{}` has {dim}", ds.name)));
    }
    let spec = &exp.manifest.plot;
    if spec.resolution < 2 || !(0.0 < spec.band && spec.band < 1.0) {
        return Err(Error::Config("plot resolution must be >= 2 and band in (0, 1)".into()));
    }
    let model = load_models(&[checkpoint.to_path_buf()], &ds)?.remove(0);
    let family = model.family();
    let raw_train = Tensor::from_fn(ds.train.len(), dim, |i, j| ds.feature_stats[j].invert(ds.train.x.get(i, j)));
    let bounds: Vec<[f64; 2]> = match &spec.bounds {
        Some(b) if b.len() == dim => b.clone(),
        Some(_) => return Err(Error::Config("plot bounds must list one [lo, hi] per feature".into())),
        None => (0..dim)
            .map(|j| {
                let col: Vec<f64> = (0..raw_train.rows()).map(|i| raw_train.get(i, j)).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let pad = spec.margin * (hi - lo);
                [lo - pad, hi + pad]
            })
            .collect(),
    };
    let axes: Vec<Vec<f64>> = bounds.iter().map(|b| axis(b[0], b[1], spec.resolution)).collect();
    let points: Vec<Vec<f64>> = if dim == 1 {
        axes[0].iter().map(|&x| vec![x]).collect()
    } else {
        axes[1]
            .iter()
            .rev()
            .flat_map(|&y| axes[0].iter().map(move |&x| vec![x, y]))
            .collect()
    };
    let raw = Tensor::from_rows(&points)?;
    let preds = model.predict_all(&ds.standardize(&raw)?, exec)?;
    let dir = out.join("plot");
    let mut files = Vec::new();
    let mut columns: Vec<String> = if dim == 1 { vec!["x".into()] } else { vec!["x1".into(), "x2".into()] };
    let mut rows = Vec::with_capacity(points.len());
    let unc = preds
        .iter()
        .map(|p| uncertainties(p, family))
        .collect::<Result<Vec<_>>>()?;

    if dim == 2 {
        columns.extend(["aleatoric", "predictive", "log10_evidence"].map(String::from));
        for (pt, u) in points.iter().zip(&unc) {
            rows.push(vec![pt[0], pt[1], u.aleatoric, u.predictive, u.epistemic.log10()]);
        }
        let n = spec.resolution;
        let cell = (400 / n).max(1) as u32;
        for (k, name) in ["aleatoric", "predictive", "log10_evidence"].iter().enumerate() {
            let vals = normalize(&rows.iter().map(|r| r[2 + k]).collect::<Vec<_>>());
            let mut img = RgbImage::new(n as u32 * cell, n as u32 * cell);
            for (idx, v) in vals.iter().enumerate() {
                let (gy, gx) = ((idx / n) as u32, (idx % n) as u32);
                for dy in 0..cell {
                    for dx in 0..cell {
                        img.put_pixel(gx * cell + dx, gy * cell + dy, viridis(*v));
                    }
                }
            }
            let to_px = |v: f64, b: [f64; 2], flip: bool| {
                let t = (v - b[0]) / (b[1] - b[0]);
                let t = if flip { 1.0 - t } else { t };
                (t * (n as u32 * cell) as f64) as i64
            };
            for i in 0..raw_train.rows() {
                let y = ds.train.y.get(i, 0);
                let color = if y == 0.0 { Rgb([230, 60, 60]) } else { Rgb([250, 250, 250]) };
                dot(&mut img, to_px(raw_train.get(i, 0), bounds[0], false), to_px(raw_train.get(i, 1), bounds[1], true), 1, color);
            }
            let path = dir.join(format!("{name}.png"));
            save_png(&img, &path)?;
            files.push(path);
        }
    } else {
        columns.extend(["mean", "lower", "upper", "aleatoric", "predictive", "log10_evidence"].map(String::from));
        let tail = (1.0 - spec.band) / 2.0;
        for ((pt, p), u) in points.iter().zip(&preds).zip(&unc) {
            let pred = model.predictive(p)?;
            let to = |v: f64| ds.target_to_original(v);
            rows.push(vec![
                pt[0],
                to(pred.point()),
                to(quantile(&pred, tail)?),
                to(quantile(&pred, 1.0 - tail)?),
                u.aleatoric,
                u.predictive,
                u.epistemic.log10(),
            ]);
        }
        let ys: Vec<f64> = (0..ds.train.len()).map(|i| ds.target_to_original(ds.train.y.get(i, 0))).collect();
        // Far from the data the band explodes; the view stays around the targets.
        let dlo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let dhi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (ylo, yhi) = (dlo - 2.0 * (dhi - dlo), dhi + 2.0 * (dhi - dlo));
        let (w, h) = (600u32, 400u32);
        let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
        let px = |x: f64| ((x - bounds[0][0]) / (bounds[0][1] - bounds[0][0]) * (w - 1) as f64) as i64;
        let py = |y: f64| ((1.0 - (y - ylo) / (yhi - ylo).max(1e-12)) * (h - 1) as f64) as i64;
        for r in &rows {
            let x = px(r[0]);
            let (top, bottom) = (py(r[3]).max(0), py(r[2]).min(h as i64 - 1));
            for y in top..=bottom {
                dot(&mut img, x, y, 0, Rgb([190, 210, 240]));
            }
        }
        for r in &rows {
            if r[1] >= ylo && r[1] <= yhi {
                dot(&mut img, px(r[0]), py(r[1]), 1, Rgb([20, 60, 160]));
            }
        }
        for i in 0..raw_train.rows() {
            dot(&mut img, px(raw_train.get(i, 0)), py(ys[i]), 1, Rgb([0, 0, 0]));
        }
        let path = dir.join("regression.png");
        save_png(&img, &path)?;
        files.push(path);
    }
    let mut csv = columns.join(",");
    csv.push('\n');
    for r in &rows {
        let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        writeln!(csv, "{}", line.join(",")).unwrap();
    }
    let path = dir.join("grid.csv");
    write(&path, csv)?;
    files.push(path);
    Ok(PlotOutput { files, columns, rows })
}
