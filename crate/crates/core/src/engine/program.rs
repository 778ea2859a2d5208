use serde::{Deserialize, Serialize};

use super::EngineError;

/// One affine inequality `a . x - b <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "(Vec<f64>, f64)", into = "(Vec<f64>, f64)")]
pub struct AffineRow {
    pub a: Vec<f64>,
    pub b: f64,
}

impl AffineRow {
    pub fn new(a: Vec<f64>, b: f64) -> Self {
        Self { a, b }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        dot(&self.a, x) - self.b
    }
}

impl From<(Vec<f64>, f64)> for AffineRow {
    fn from((a, b): (Vec<f64>, f64)) -> Self {
        Self { a, b }
    }
}

impl From<AffineRow> for (Vec<f64>, f64) {
    fn from(row: AffineRow) -> Self {
        (row.a, row.b)
    }
}

pub(crate) fn dot(a: &[f64], x: &[f64]) -> f64 {
    a.iter().zip(x).map(|(a, x)| a * x).sum()
}

/// Minimize `cost . x` over a finite box subject to one constraint per
/// sample. A sample's constraint is `g(x) = max_k (a_k . x - b_k) <= 0`
/// over the rows it owns; by default every row is its own sample.
///
/// Serialized as
/// `{"dimension", "cost", "constraints": [[[a...], b], ...], "box": [[lo, hi], ...]}`
/// plus an optional `"samples"` array naming the owning sample of each row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearScenarioProgram {
    pub dimension: usize,
    pub cost: Vec<f64>,
    pub constraints: Vec<AffineRow>,
    #[serde(rename = "box")]
    pub domain_box: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<usize>>,
}

impl LinearScenarioProgram {
    /// One sample per row.
    pub fn new(
        cost: Vec<f64>,
        constraints: Vec<AffineRow>,
        domain_box: Vec<[f64; 2]>,
    ) -> Result<Self, EngineError> {
        let program = Self {
            dimension: cost.len(),
            cost,
            constraints,
            domain_box,
            samples: None,
        };
        program.validate()?;
        Ok(program)
    }

    /// Samples given as groups of rows; group `i` becomes sample `i`.
    pub fn grouped(
        cost: Vec<f64>,
        groups: Vec<Vec<AffineRow>>,
        domain_box: Vec<[f64; 2]>,
    ) -> Result<Self, EngineError> {
        let mut constraints = Vec::new();
        let mut owners = Vec::new();
        let mut single = true;
        for (i, group) in groups.into_iter().enumerate() {
            single &= group.len() == 1;
            owners.extend(std::iter::repeat_n(i, group.len()));
            constraints.extend(group);
        }
        let program = Self {
            dimension: cost.len(),
            cost,
            constraints,
            domain_box,
            samples: if single { None } else { Some(owners) },
        };
        program.validate()?;
        Ok(program)
    }

    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        let program: Self =
            serde_json::from_str(text).map_err(|e| EngineError::Schema(e.to_string()))?;
        program.validate()?;
        Ok(program)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serializes")
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let d = self.dimension;
        let bad = |msg: String| Err(EngineError::Schema(msg));
        if d == 0 {
            return bad("dimension must be positive".into());
        }
        if self.cost.len() != d {
            return bad(format!("cost has length {}, expected {d}", self.cost.len()));
        }
        if self.domain_box.len() != d {
            return bad(format!("box has {} entries, expected {d}", self.domain_box.len()));
        }
        if self.cost.iter().any(|c| !c.is_finite()) {
            return bad("cost entries must be finite".into());
        }
        for (j, [lo, hi]) in self.domain_box.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return bad(format!("box[{j}] = [{lo}, {hi}] must be finite with lo < hi"));
            }
        }
        for (i, row) in self.constraints.iter().enumerate() {
            if row.a.len() != d {
                return bad(format!(
                    "constraints[{i}] has {} coefficients, expected {d}",
                    row.a.len()
                ));
            }
            if !row.b.is_finite() || row.a.iter().any(|v| !v.is_finite()) {
                return bad(format!("constraints[{i}] has non-finite entries"));
            }
        }
        if let Some(owners) = &self.samples {
            if owners.len() != self.constraints.len() {
                return bad(format!(
                    "samples has {} entries for {} constraint rows",
                    owners.len(),
                    self.constraints.len()
                ));
            }
            let count = owners.iter().max().map_or(0, |m| m + 1);
            let mut seen = vec![false; count];
            for &o in owners {
                seen[o] = true;
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return bad(format!("sample {missing} owns no constraint row"));
            }
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        match &self.samples {
            None => self.constraints.len(),
            Some(owners) => owners.iter().max().map_or(0, |m| m + 1),
        }
    }

    pub fn owner(&self, row: usize) -> usize {
        self.samples.as_ref().map_or(row, |o| o[row])
    }

    /// Row indices owned by each sample.
    pub fn rows_by_sample(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.sample_count()];
        for row in 0..self.constraints.len() {
            groups[self.owner(row)].push(row);
        }
        groups
    }

    pub fn lower(&self) -> Vec<f64> {
        self.domain_box.iter().map(|b| b[0]).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.domain_box.iter().map(|b| b[1]).collect()
    }

    /// `g(x, omega_i)` for sample `i`.
    pub fn sample_value(&self, sample: usize, x: &[f64]) -> f64 {
        match &self.samples {
            None => self.constraints[sample].value(x),
            Some(owners) => owners
                .iter()
                .zip(&self.constraints)
                .filter(|(&o, _)| o == sample)
                .map(|(_, row)| row.value(x))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn sample_values(&self, x: &[f64]) -> Vec<f64> {
        let mut values = vec![f64::NEG_INFINITY; self.sample_count()];
        for (row, c) in self.constraints.iter().enumerate() {
            let o = self.owner(row);
            values[o] = values[o].max(c.value(x));
        }
        values
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        dot(&self.cost, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_layout_matches_schema() {
        let text = r#"{"dimension":1,"cost":[1.0],"constraints":[[[-1.0],-0.1],[[-1.0],-0.5]],"box":[[-10.0,10.0]]}"#;
        let p = LinearScenarioProgram::from_json(text).unwrap();
        assert_eq!(p.sample_count(), 2);
        assert_eq!(p.constraints[1], AffineRow::new(vec![-1.0], -0.5));
        let back: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
        let orig: serde_json::Value = serde_json::from_str(text).unwrap();
        assert_eq!(back, orig);
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{"dimension":1,"cost":[1.0],"constraints":[],"box":[[0,1]],"extra":3}"#;
        let err = LinearScenarioProgram::from_json(text).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
    }

    #[test]
    fn schema_violations() {
        let cases = [
            r#"{"dimension":2,"cost":[1.0],"constraints":[],"box":[[0,1],[0,1]]}"#,
            r#"{"dimension":1,"cost":[1.0],"constraints":[[[1.0,2.0],0.0]],"box":[[0,1]]}"#,
            r#"{"dimension":1,"cost":[1.0],"constraints":[],"box":[[1,0]]}"#,
            r#"{"dimension":1,"cost":[1.0],"constraints":[[[1.0],0.0]],"box":[[0,1]],"samples":[1]}"#,
        ];
        for c in cases {
            assert!(LinearScenarioProgram::from_json(c).is_err(), "{c}");
        }
    }

    #[test]
    fn grouped_rows_take_the_max() {
        let p = LinearScenarioProgram::grouped(
            vec![0.0, 1.0],
            vec![
                vec![AffineRow::new(vec![1.0, -1.0], 0.2), AffineRow::new(vec![-1.0, -1.0], -0.2)],
                vec![AffineRow::new(vec![1.0, -1.0], 0.9), AffineRow::new(vec![-1.0, -1.0], -0.9)],
            ],
            vec![[0.0, 1.0], [0.0, 1.0]],
        )
        .unwrap();
        assert_eq!(p.samples.as_deref(), Some(&[0, 0, 1, 1][..]));
        let x = [0.55, 0.35];
        assert!((p.sample_value(0, &x) - 0.0).abs() < 1e-12);
        assert!((p.sample_value(1, &x) - 0.0).abs() < 1e-12);
        assert_eq!(p.sample_values(&x).len(), 2);
    }
}
