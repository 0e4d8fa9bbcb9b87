//! WebAssembly bindings for the browser demo in `www/`. Each export returns
//! a JSON string; errors surface as JavaScript exceptions.

use matinfo::collapse::{nc_targets, structure_matrix, structure_spectrum};
use matinfo::linalg::gram;
use matinfo::metrics::{davies_bouldin, effective_rank, matrix_entropy, silhouette};
use matinfo::trainer::make_blobs;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct StructureReport {
    pub alpha: f64,
    pub classes: usize,
    pub spectrum: Vec<f64>,
    pub entropy: f64,
}

pub fn structure_report(alpha: f64, classes: usize) -> Result<StructureReport, String> {
    let e = structure_matrix(alpha, classes).map_err(|e| e.to_string())?;
    Ok(StructureReport {
        alpha,
        classes,
        spectrum: structure_spectrum(alpha, classes),
        entropy: matrix_entropy(&e),
    })
}

#[derive(Debug, Serialize)]
pub struct TargetPoint {
    pub classes: usize,
    pub mir: f64,
    pub entropy: f64,
}

pub fn target_curve(max_classes: usize) -> Result<Vec<TargetPoint>, String> {
    (3..=max_classes.max(3))
        .map(|c| {
            let t = nc_targets(c).map_err(|e| e.to_string())?;
            Ok(TargetPoint {
                classes: c,
                mir: t.mir,
                entropy: t.entropy,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct BlobReport {
    /// first two principal coordinates of each sample
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    pub entropy: f64,
    pub effective_rank: f64,
    pub silhouette: f64,
    pub davies_bouldin: f64,
}

fn principal_plane(z: &DMatrix<f64>) -> Vec<[f64; 2]> {
    let mean = z.column_mean();
    let centered = DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| z[(i, j)] - mean[i]);
    let eig = SymmetricEigen::new(&centered * centered.transpose());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axis = |k: usize| {
        order
            .get(k)
            .map(|&i| eig.eigenvectors.column(i).into_owned())
    };
    let (a, b) = (axis(0), axis(1));
    centered
        .column_iter()
        .map(|col| {
            [
                a.as_ref().map_or(0.0, |v| v.dot(&col)),
                b.as_ref().map_or(0.0, |v| v.dot(&col)),
            ]
        })
        .collect()
}

pub fn blob_report(
    classes: usize,
    per_class: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> Result<BlobReport, String> {
    let err = |e: matinfo::Error| e.to_string();
    let z = make_blobs(classes, classes.max(2), per_class, separation, noise, seed).map_err(err)?;
    Ok(BlobReport {
        points: principal_plane(z.data()),
        labels: z.labels().unwrap_or_default().to_vec(),
        entropy: matrix_entropy(&gram(&z).map_err(err)?),
        effective_rank: effective_rank(&z).map_err(err)?,
        silhouette: silhouette(&z).map_err(err)?,
        davies_bouldin: davies_bouldin(&z).map_err(err)?,
    })
}

fn to_js<T: Serialize>(result: Result<T, String>) -> Result<String, JsValue> {
    result
        .and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

/// Spectrum and entropy of `E(α)` on `classes` classes.
#[wasm_bindgen(js_name = structureSpectrum)]
pub fn structure_spectrum_js(alpha: f64, classes: usize) -> Result<String, JsValue> {
    to_js(structure_report(alpha, classes))
}

/// Collapse MIR and entropy targets for 3 through `max_classes` classes.
#[wasm_bindgen(js_name = targetCurve)]
pub fn target_curve_js(max_classes: usize) -> Result<String, JsValue> {
    to_js(target_curve(max_classes))
}

/// Gaussian blobs with their 2-D projection and clustering metrics.
#[wasm_bindgen(js_name = blobs)]
pub fn blobs_js(
    classes: usize,
    per_class: usize,
    separation: f64,
    noise: f64,
    seed: u32,
) -> Result<String, JsValue> {
    to_js(blob_report(
        classes,
        per_class,
        separation,
        noise,
        seed as u64,
    ))
}
