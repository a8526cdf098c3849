//! Multi-site estimation from raw cross-product summaries.
//!
//! Sites never centre: they ship raw sums and cross-products, and the
//! coordinator centres globally with `C(U, W) = ΣUᵀW − (ΣU)(ΣW)ᵀ/N`. Per-site
//! centring would change the pooled cross-products.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{symmetrise, Dataset, SufficientStats};
use crate::error::{MediationError, Result};

pub const SUMMARY_SCHEMA: &str = "optmed-summary/1";

/// Relative asymmetry tolerated in a loaded `XᵀX`.
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SiteSummary {
    pub site_id: String,
    pub n: usize,
    pub sum_x: DVector<f64>,
    pub sum_a: f64,
    pub sum_y: f64,
    pub xtx: DMatrix<f64>,
    pub xta: DVector<f64>,
    pub xty: DVector<f64>,
    pub ata: f64,
    pub aty: f64,
    pub yty: f64,
    pub feature_names: Vec<String>,
    pub schema_version: String,
}

/// Raw sums and cross-products of one site's records.
pub fn site_extract(site_id: &str, d: &Dataset) -> Result<SiteSummary> {
    let x = d.mediators();
    let a = d.treatment();
    let y = d.outcome();
    // Dataset construction already rejects non-finite cells; this guards
    // against overflow in the products.
    let xtx = x.tr_mul(x);
    let summary = SiteSummary {
        site_id: site_id.to_string(),
        n: d.n(),
        sum_x: x.row_sum().transpose(),
        sum_a: a.sum(),
        sum_y: y.sum(),
        xta: x.tr_mul(a),
        xty: x.tr_mul(y),
        xtx,
        ata: a.dot(a),
        aty: a.dot(y),
        yty: y.dot(y),
        feature_names: d.feature_names().to_vec(),
        schema_version: SUMMARY_SCHEMA.to_string(),
    };
    summary.check_finite()?;
    Ok(summary)
}

impl SiteSummary {
    pub fn p(&self) -> usize {
        self.sum_x.len()
    }

    fn check_finite(&self) -> Result<()> {
        let scalars = [self.sum_a, self.sum_y, self.ata, self.aty, self.yty];
        let all = self
            .sum_x
            .iter()
            .chain(self.xtx.iter())
            .chain(self.xta.iter())
            .chain(self.xty.iter())
            .chain(scalars.iter());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(MediationError::NonFiniteInput {
                row: 0,
                column: format!("summary of site `{}`", self.site_id),
            });
        }
        Ok(())
    }

    /// Shape, count, symmetry and schema checks.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SUMMARY_SCHEMA {
            return Err(MediationError::SchemaMismatch(format!(
                "site `{}` has schema `{}`, expected `{SUMMARY_SCHEMA}`",
                self.site_id, self.schema_version
            )));
        }
        let p = self.p();
        if self.n == 0 {
            return Err(MediationError::TooFewObservations { required: 1, got: 0 });
        }
        if self.xtx.shape() != (p, p) || self.xta.len() != p || self.xty.len() != p || self.feature_names.len() != p {
            return Err(MediationError::DimensionMismatch(format!(
                "site `{}` has inconsistent summary dimensions",
                self.site_id
            )));
        }
        self.check_finite()?;
        let scale = self.xtx.amax().max(f64::MIN_POSITIVE);
        for i in 0..p {
            if self.xtx[(i, i)] < 0.0 {
                return Err(MediationError::SchemaMismatch(format!("site `{}`: XtX has a negative diagonal", self.site_id)));
            }
            for j in 0..i {
                if (self.xtx[(i, j)] - self.xtx[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(MediationError::SchemaMismatch(format!(
                        "site `{}`: XtX is not symmetric at ({i}, {j})",
                        self.site_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Fieldwise sum, keeping `self`'s id and names.
    fn add(&self, other: &SiteSummary) -> SiteSummary {
        SiteSummary {
            site_id: self.site_id.clone(),
            n: self.n + other.n,
            sum_x: &self.sum_x + &other.sum_x,
            sum_a: self.sum_a + other.sum_a,
            sum_y: self.sum_y + other.sum_y,
            xtx: &self.xtx + &other.xtx,
            xta: &self.xta + &other.xta,
            xty: &self.xty + &other.xty,
            ata: self.ata + other.ata,
            aty: self.aty + other.aty,
            yty: self.yty + other.yty,
            feature_names: self.feature_names.clone(),
            schema_version: self.schema_version.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&SummaryDoc::from(self))
            .map_err(|e| MediationError::SchemaMismatch(e.to_string()))
    }

    /// Parses and re-validates a summary document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SummaryDoc = serde_json::from_str(text).map_err(|e| MediationError::SchemaMismatch(e.to_string()))?;
        let s = doc.into_summary()?;
        s.validate()?;
        Ok(s)
    }
}

fn tree_sum(items: &[&SiteSummary]) -> SiteSummary {
    match items {
        [one] => (*one).clone(),
        _ => {
            let (l, r) = items.split_at(items.len() / 2);
            tree_sum(l).add(&tree_sum(r))
        }
    }
}

/// Pooled raw totals, accumulated in site-id order by a pairwise tree so the
/// result does not depend on the order of `summaries`.
pub fn pool(summaries: &[SiteSummary]) -> Result<SiteSummary> {
    let first = summaries
        .first()
        .ok_or_else(|| MediationError::InvalidArgument("no site summaries to combine".into()))?;
    for s in summaries {
        s.validate()?;
        if s.feature_names != first.feature_names {
            return Err(MediationError::FeatureOrderMismatch {
                first: first.site_id.clone(),
                other: s.site_id.clone(),
            });
        }
    }
    let mut sorted: Vec<&SiteSummary> = summaries.iter().collect();
    sorted.sort_by(|a, b| a.site_id.cmp(&b.site_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].site_id == w[1].site_id) {
        return Err(MediationError::InvalidArgument(format!("duplicate site id `{}`", w[0].site_id)));
    }
    Ok(tree_sum(&sorted))
}

/// Globally centred sufficient statistics of the union of all sites.
pub fn combine(summaries: &[SiteSummary]) -> Result<SufficientStats> {
    combine_with(summaries, false)
}

/// As [`combine`], optionally scaling mediators to unit pooled standard
/// deviation (divisor `N − 1`) as centralised standardisation would.
pub fn combine_with(summaries: &[SiteSummary], standardise: bool) -> Result<SufficientStats> {
    let t = pool(summaries)?;
    let nf = t.n as f64;
    let mut xtx = &t.xtx - &t.sum_x * t.sum_x.transpose() / nf;
    symmetrise(&mut xtx);
    let mut xta = &t.xta - &t.sum_x * (t.sum_a / nf);
    let mut xty = &t.xty - &t.sum_x * (t.sum_y / nf);
    let ata = t.ata - t.sum_a * t.sum_a / nf;
    let aty = t.aty - t.sum_a * t.sum_y / nf;
    let yty = (t.yty - t.sum_y * t.sum_y / nf).max(0.0);
    if standardise {
        if t.n < 3 {
            return Err(MediationError::TooFewObservations { required: 3, got: t.n });
        }
        let sd: Vec<f64> = (0..t.p()).map(|j| (xtx[(j, j)].max(0.0) / (nf - 1.0)).sqrt()).collect();
        for (j, &s) in sd.iter().enumerate() {
            if !(s > 0.0) {
                return Err(MediationError::ZeroVarianceColumn(t.feature_names[j].clone()));
            }
        }
        for i in 0..t.p() {
            xta[i] /= sd[i];
            xty[i] /= sd[i];
            for j in 0..t.p() {
                xtx[(i, j)] /= sd[i] * sd[j];
            }
        }
    }
    SufficientStats::from_centred_cross_products(&xtx, &xta, &xty, ata, aty, yty, t.n)
}

// ---------------------------------------------------------------- JSON

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixDoc {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixDoc {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        // nalgebra stores column-major; the document is row-major
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.as_slice().to_vec(),
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        if self.rows * self.cols != self.data.len() {
            return Err(MediationError::SchemaMismatch(format!(
                "`{name}` declares {}x{} but holds {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(())
    }

    fn into_matrix(self, name: &str) -> Result<DMatrix<f64>> {
        self.check(name)?;
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }

    fn into_vector(self, name: &str) -> Result<DVector<f64>> {
        self.check(name)?;
        if self.cols != 1 {
            return Err(MediationError::SchemaMismatch(format!("`{name}` must be a column vector")));
        }
        Ok(DVector::from_vec(self.data))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SummaryDoc {
    #[serde(rename = "schemaVersion")]
    schema_version: String,
    #[serde(rename = "siteId")]
    site_id: String,
    n: usize,
    #[serde(rename = "sumX")]
    sum_x: MatrixDoc,
    #[serde(rename = "sumA")]
    sum_a: f64,
    #[serde(rename = "sumY")]
    sum_y: f64,
    #[serde(rename = "XtX")]
    xtx: MatrixDoc,
    #[serde(rename = "XtA")]
    xta: MatrixDoc,
    #[serde(rename = "XtY")]
    xty: MatrixDoc,
    #[serde(rename = "AtA")]
    ata: f64,
    #[serde(rename = "AtY")]
    aty: f64,
    #[serde(rename = "YtY")]
    yty: f64,
    #[serde(rename = "featureNames")]
    feature_names: Vec<String>,
}

impl From<&SiteSummary> for SummaryDoc {
    fn from(s: &SiteSummary) -> Self {
        Self {
            schema_version: s.schema_version.clone(),
            site_id: s.site_id.clone(),
            n: s.n,
            sum_x: MatrixDoc::from_vector(&s.sum_x),
            sum_a: s.sum_a,
            sum_y: s.sum_y,
            xtx: MatrixDoc::from_matrix(&s.xtx),
            xta: MatrixDoc::from_vector(&s.xta),
            xty: MatrixDoc::from_vector(&s.xty),
            ata: s.ata,
            aty: s.aty,
            yty: s.yty,
            feature_names: s.feature_names.clone(),
        }
    }
}

impl SummaryDoc {
    fn into_summary(self) -> Result<SiteSummary> {
        Ok(SiteSummary {
            site_id: self.site_id,
            n: self.n,
            sum_x: self.sum_x.into_vector("sumX")?,
            sum_a: self.sum_a,
            sum_y: self.sum_y,
            xtx: self.xtx.into_matrix("XtX")?,
            xta: self.xta.into_vector("XtA")?,
            xty: self.xty.into_vector("XtY")?,
            ata: self.ata,
            aty: self.aty,
            yty: self.yty,
            feature_names: self.feature_names,
            schema_version: self.schema_version,
        })
    }
}
