//! Model parameter containers and their JSON document form.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;
const CONVENTION_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// Per-profile regression effects, with `b_U = a_U` and `b_V = a_V - 1`.
    Full,
    /// Shared `delta_A`, `phi`, `delta_B`; free per-profile hyperparameters.
    Sparse,
}

impl std::fmt::Display for Representation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Representation::Full => f.write_str("full"),
            Representation::Sparse => f.write_str("sparse"),
        }
    }
}

impl std::str::FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Representation::Full),
            "sparse" => Ok(Representation::Sparse),
            other => Err(Error::validation(format!("unknown representation '{other}'"))),
        }
    }
}

/// Frequency GLM effects and Gamma prior of the heterogeneity factor U.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileFrequencyParams {
    pub delta_a: Vec<f64>,
    pub a_u: f64,
    pub b_u: f64,
}

/// Severity GLM effects, Gamma shape scale `phi` and Inverse-Gamma prior of V.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileSeverityParams {
    pub delta_b: Vec<f64>,
    pub phi: f64,
    pub a_v: f64,
    pub b_v: f64,
}

/// Initial distribution and transition matrix of the latent profile chain.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionModel {
    pub w0: Vec<f64>,
    pub w: Vec<Vec<f64>>,
}

impl TransitionModel {
    pub fn k(&self) -> usize {
        self.w0.len()
    }

    pub fn uniform(k: usize) -> Self {
        let p = 1.0 / k as f64;
        TransitionModel {
            w0: vec![p; k],
            w: vec![vec![p; k]; k],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.w0.len();
        if k == 0 {
            return Err(Error::validation("transition model needs K >= 1"));
        }
        check_probability_vector("w0", &self.w0)?;
        if self.w.len() != k {
            return Err(Error::Dimension {
                context: "transition matrix rows",
                expected: k,
                got: self.w.len(),
            });
        }
        for (h, row) in self.w.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Dimension {
                    context: "transition matrix columns",
                    expected: k,
                    got: row.len(),
                });
            }
            check_probability_vector(&format!("W row {}", h + 1), row)?;
        }
        Ok(())
    }
}

fn check_probability_vector(name: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::validation(format!("{name} has entries outside [0, 1]")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL * p.len() as f64 {
        return Err(Error::validation(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    pub representation: Representation,
    pub frequency: Vec<ProfileFrequencyParams>,
    pub severity: Vec<ProfileSeverityParams>,
    pub transitions: TransitionModel,
}

impl ModelParameters {
    pub fn k(&self) -> usize {
        self.transitions.k()
    }

    pub fn freq_dim(&self) -> usize {
        self.frequency.first().map_or(0, |f| f.delta_a.len())
    }

    pub fn sev_dim(&self) -> usize {
        self.severity.first().map_or(0, |s| s.delta_b.len())
    }

    /// Positivity, dimensions and stochasticity.
    pub fn validate(&self) -> Result<()> {
        self.transitions.validate()?;
        let k = self.k();
        if self.frequency.len() != k || self.severity.len() != k {
            return Err(Error::validation(format!(
                "expected {k} frequency and severity profiles, got {} and {}",
                self.frequency.len(),
                self.severity.len()
            )));
        }
        let (pa, pb) = (self.freq_dim(), self.sev_dim());
        if pa == 0 || pb == 0 {
            return Err(Error::validation("regression vectors must include an intercept"));
        }
        for (j, (f, s)) in self.frequency.iter().zip(&self.severity).enumerate() {
            let j = j + 1;
            if f.delta_a.len() != pa || s.delta_b.len() != pb {
                return Err(Error::validation(format!(
                    "profile {j} has inconsistent regression dimensions"
                )));
            }
            if f.delta_a.iter().chain(&s.delta_b).any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("profile {j} has non-finite effects")));
            }
            if !(f.a_u > 0.0 && f.b_u > 0.0 && f.a_u.is_finite() && f.b_u.is_finite()) {
                return Err(Error::domain(format!("profile {j}: a_U and b_U must be positive")));
            }
            if !(s.phi > 0.0 && s.phi.is_finite()) {
                return Err(Error::domain(format!("profile {j}: phi must be positive")));
            }
            if !(s.a_v > 1.0 && s.a_v.is_finite()) {
                return Err(Error::domain(format!("profile {j}: a_V must exceed 1")));
            }
            if !(s.b_v > 0.0 && s.b_v.is_finite()) {
                return Err(Error::domain(format!("profile {j}: b_V must be positive")));
            }
        }
        Ok(())
    }

    /// Checks the structural constraints of the declared representation.
    pub fn check_representation(&self) -> Result<()> {
        match self.representation {
            Representation::Full => {
                for (j, (f, s)) in self.frequency.iter().zip(&self.severity).enumerate() {
                    let ok_u = (f.b_u - f.a_u).abs() <= CONVENTION_TOL * f.a_u.max(1.0);
                    let ok_v = (s.b_v - (s.a_v - 1.0)).abs() <= CONVENTION_TOL * s.a_v.max(1.0);
                    if !ok_u || !ok_v {
                        return Err(Error::validation(format!(
                            "full representation requires b_U = a_U and b_V = a_V - 1 (profile {})",
                            j + 1
                        )));
                    }
                }
            }
            Representation::Sparse => {
                let (f0, s0) = (&self.frequency[0], &self.severity[0]);
                for (f, s) in self.frequency.iter().zip(&self.severity).skip(1) {
                    if f.delta_a != f0.delta_a || s.delta_b != s0.delta_b || s.phi != s0.phi {
                        return Err(Error::validation(
                            "sparse representation requires shared delta_A, phi and delta_B",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Reorders profile labels: new profile `i` is old profile `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> ModelParameters {
        let t = &self.transitions;
        ModelParameters {
            representation: self.representation,
            frequency: order.iter().map(|&j| self.frequency[j].clone()).collect(),
            severity: order.iter().map(|&j| self.severity[j].clone()).collect(),
            transitions: TransitionModel {
                w0: order.iter().map(|&j| t.w0[j]).collect(),
                w: order
                    .iter()
                    .map(|&h| order.iter().map(|&j| t.w[h][j]).collect())
                    .collect(),
            },
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let params: ModelParameters = serde_json::from_str(s)?;
        params.validate()?;
        Ok(params)
    }
}

#[derive(Serialize, Deserialize)]
struct ProfileDoc {
    #[serde(rename = "delta_A", skip_serializing_if = "Option::is_none", default)]
    delta_a: Option<Vec<f64>>,
    #[serde(rename = "a_U")]
    a_u: f64,
    #[serde(rename = "b_U")]
    b_u: f64,
    #[serde(rename = "delta_B", skip_serializing_if = "Option::is_none", default)]
    delta_b: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    phi: Option<f64>,
    #[serde(rename = "a_V")]
    a_v: f64,
    #[serde(rename = "b_V")]
    b_v: f64,
}

#[derive(Serialize, Deserialize)]
struct ParamsDoc {
    representation: Representation,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "delta_A", skip_serializing_if = "Option::is_none", default)]
    delta_a: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    phi: Option<f64>,
    #[serde(rename = "delta_B", skip_serializing_if = "Option::is_none", default)]
    delta_b: Option<Vec<f64>>,
    profiles: Vec<ProfileDoc>,
    w0: Vec<f64>,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
}

impl Serialize for ModelParameters {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let sparse = self.representation == Representation::Sparse;
        let profiles = self
            .frequency
            .iter()
            .zip(&self.severity)
            .map(|(f, s)| ProfileDoc {
                delta_a: (!sparse).then(|| f.delta_a.clone()),
                a_u: f.a_u,
                b_u: f.b_u,
                delta_b: (!sparse).then(|| s.delta_b.clone()),
                phi: (!sparse).then_some(s.phi),
                a_v: s.a_v,
                b_v: s.b_v,
            })
            .collect();
        let doc = ParamsDoc {
            representation: self.representation,
            k: self.k(),
            delta_a: sparse.then(|| self.frequency[0].delta_a.clone()),
            phi: sparse.then(|| self.severity[0].phi),
            delta_b: sparse.then(|| self.severity[0].delta_b.clone()),
            profiles,
            w0: self.transitions.w0.clone(),
            w: self.transitions.w.clone(),
        };
        doc.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ModelParameters {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = ParamsDoc::deserialize(deserializer)?;
        if doc.profiles.len() != doc.k || doc.w0.len() != doc.k {
            return Err(D::Error::custom(format!(
                "K = {} but {} profiles and {} initial probabilities given",
                doc.k,
                doc.profiles.len(),
                doc.w0.len()
            )));
        }
        let sparse = doc.representation == Representation::Sparse;
        let mut frequency = Vec::with_capacity(doc.k);
        let mut severity = Vec::with_capacity(doc.k);
        for (j, p) in doc.profiles.into_iter().enumerate() {
            let pick = |own: Option<Vec<f64>>, shared: &Option<Vec<f64>>, name: &str| {
                if sparse { shared.clone() } else { own }.ok_or_else(|| {
                    D::Error::custom(format!("profile {}: missing {name}", j + 1))
                })
            };
            let delta_a = pick(p.delta_a, &doc.delta_a, "delta_A")?;
            let delta_b = pick(p.delta_b, &doc.delta_b, "delta_B")?;
            let phi = if sparse { doc.phi } else { p.phi }
                .ok_or_else(|| D::Error::custom(format!("profile {}: missing phi", j + 1)))?;
            frequency.push(ProfileFrequencyParams {
                delta_a,
                a_u: p.a_u,
                b_u: p.b_u,
            });
            severity.push(ProfileSeverityParams {
                delta_b,
                phi,
                a_v: p.a_v,
                b_v: p.b_v,
            });
        }
        Ok(ModelParameters {
            representation: doc.representation,
            frequency,
            severity,
            transitions: TransitionModel { w0: doc.w0, w: doc.w },
        })
    }
}
