//! Randomized experience replay: a fixed offline batch of transitions
//! `(x_b, a_b, y_b, l_b)` drawn once and reused by every iteration.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::systems::{Plant, StageCost};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SamplerKind {
    /// Uniform on `[lo, hi]`; `lo == hi` is a point mass.
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, variance: f64 },
}

/// I.i.d. coordinates from a scalar distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    #[serde(flatten)]
    pub kind: SamplerKind,
    pub dimension: usize,
}

impl SamplerSpec {
    pub fn uniform(lo: f64, hi: f64, dimension: usize) -> Self {
        Self {
            kind: SamplerKind::Uniform { lo, hi },
            dimension,
        }
    }

    pub fn gaussian(mean: f64, variance: f64, dimension: usize) -> Self {
        Self {
            kind: SamplerKind::Gaussian { mean, variance },
            dimension,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::InvalidArgument("sampler dimension must be positive".into()));
        }
        match self.kind {
            SamplerKind::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
                Err(Error::InvalidArgument(format!("uniform sampler needs lo <= hi, got [{lo}, {hi}]")))
            }
            SamplerKind::Gaussian { mean, variance } if !(mean.is_finite() && variance > 0.0 && variance.is_finite()) => {
                Err(Error::InvalidArgument(format!("gaussian sampler needs variance > 0, got {variance}")))
            }
            _ => Ok(()),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        match self.kind {
            SamplerKind::Uniform { lo, hi } if lo == hi => DVector::from_element(self.dimension, lo),
            SamplerKind::Uniform { lo, hi } => {
                let dist = Uniform::new_inclusive(lo, hi);
                DVector::from_fn(self.dimension, |_, _| dist.sample(rng))
            }
            SamplerKind::Gaussian { mean, variance } => {
                let dist = Normal::new(mean, variance.sqrt()).expect("validated variance");
                DVector::from_fn(self.dimension, |_, _| dist.sample(rng))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub x: DVector<f64>,
    pub a: DVector<f64>,
    pub y: DVector<f64>,
    pub l: f64,
}

/// Provenance stored alongside the tuples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferMeta {
    pub seed: u64,
    pub state_sampler: SamplerSpec,
    pub action_sampler: SamplerSpec,
    /// Draws rejected because the plant or cost returned a non-finite value.
    pub resamples: usize,
}

/// Immutable batch of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    tuples: Vec<Transition>,
    meta: BufferMeta,
    state_dim: usize,
    input_dim: usize,
}

impl ReplayBuffer {
    /// Wraps existing tuples; all must share dimensions and have finite,
    /// nonnegative costs.
    pub fn from_tuples(tuples: Vec<Transition>, meta: BufferMeta) -> Result<Self> {
        let state_dim = meta.state_sampler.dimension;
        let input_dim = meta.action_sampler.dimension;
        for t in &tuples {
            check_dim("buffer x", state_dim, t.x.len())?;
            check_dim("buffer a", input_dim, t.a.len())?;
            check_dim("buffer y", state_dim, t.y.len())?;
            if !(t.l.is_finite() && t.l >= 0.0) {
                return Err(Error::InvalidArgument(format!("stage cost {} is not a finite nonnegative value", t.l)));
            }
        }
        Ok(Self {
            tuples,
            meta,
            state_dim,
            input_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Transition> {
        self.tuples.iter()
    }

    pub fn tuples(&self) -> &[Transition] {
        &self.tuples
    }

    pub fn meta(&self) -> &BufferMeta {
        &self.meta
    }

    pub fn seed(&self) -> u64 {
        self.meta.seed
    }

    pub fn resamples(&self) -> usize {
        self.meta.resamples
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {}", serde_json::to_string(&self.meta)?)?;
        let (n, m) = (self.state_dim, self.input_dim);
        let mut header = vec!["index".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("a{i}")));
        header.extend((1..=n).map(|i| format!("y{i}")));
        header.push("l".into());
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(&header)?;
        for (b, t) in self.tuples.iter().enumerate() {
            let mut rec = vec![b.to_string()];
            rec.extend(t.x.iter().chain(t.a.iter()).chain(t.y.iter()).map(|v| format!("{v:.16e}")));
            rec.push(format!("{:.16e}", t.l));
            csv.write_record(&rec)?;
        }
        csv.flush()?;
        Ok(())
    }

    /// Reads the format written by [`write_csv`](Self::write_csv): a `#`
    /// line with JSON metadata, the column header
    /// `index,x1..xn,a1..am,y1..yn,l`, then one row per tuple.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut first = String::new();
        if reader.read_line(&mut first)? == 0 {
            return Err(Error::Parse {
                line: 1,
                message: "empty buffer file".into(),
            });
        }
        let meta_json = first.trim_end().strip_prefix('#').ok_or_else(|| Error::Parse {
            line: 1,
            message: "expected '# {metadata}' line".into(),
        })?;
        let meta: BufferMeta = serde_json::from_str(meta_json.trim()).map_err(|e| Error::Parse {
            line: 1,
            message: format!("bad metadata: {e}"),
        })?;
        let (n, m) = (meta.state_sampler.dimension, meta.action_sampler.dimension);
        let width = 2 * n + m + 2;
        let schema = format!("index,x1..x{n},a1..a{m},y1..y{n},l ({width} columns)");

        let mut csv = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
        let mut records = csv.records();
        let header = match records.next() {
            Some(rec) => rec.map_err(|e| Error::Parse {
                line: 2,
                message: e.to_string(),
            })?,
            None => {
                return Err(Error::Parse {
                    line: 2,
                    message: format!("missing header, expected {schema}"),
                })
            }
        };
        if header.len() != width || header.get(0) != Some("index") || header.get(width - 1) != Some("l") {
            return Err(Error::Parse {
                line: 2,
                message: format!("header has {} columns, expected {schema}", header.len()),
            });
        }
        let mut tuples = Vec::new();
        for (i, rec) in records.enumerate() {
            let line = i + 3;
            let rec = rec.map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            if rec.len() != width {
                return Err(Error::Parse {
                    line,
                    message: format!("{} fields, expected {schema}", rec.len()),
                });
            }
            let vals: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line,
                    message: e.to_string(),
                })?;
            if rec[0].trim() != (line - 3).to_string() {
                return Err(Error::Parse {
                    line,
                    message: format!("index {} out of sequence", &rec[0]),
                });
            }
            let l = vals[2 * n + m];
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::Parse {
                    line,
                    message: format!("stage cost {l} is not finite and nonnegative"),
                });
            }
            tuples.push(Transition {
                x: DVector::from_row_slice(&vals[..n]),
                a: DVector::from_row_slice(&vals[n..n + m]),
                y: DVector::from_row_slice(&vals[n + m..2 * n + m]),
                l,
            });
        }
        if tuples.is_empty() {
            return Err(Error::Parse {
                line: 3,
                message: "buffer has no tuples".into(),
            });
        }
        Self::from_tuples(tuples, meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Draws `n` independent `(x, a)` pairs and records one plant step and one
/// cost evaluation for each. Non-finite outcomes are redrawn; more than
/// `10 n` redraws abort.
pub fn build_buffer(
    plant: &dyn Plant,
    cost: &dyn StageCost,
    state_sampler: &SamplerSpec,
    action_sampler: &SamplerSpec,
    n: usize,
    seed: u64,
) -> Result<ReplayBuffer> {
    if n == 0 {
        return Err(Error::InvalidArgument("buffer size must be positive".into()));
    }
    state_sampler.validate()?;
    action_sampler.validate()?;
    check_dim("state sampler", plant.state_dim(), state_sampler.dimension)?;
    check_dim("action sampler", plant.input_dim(), action_sampler.dimension)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tuples = Vec::with_capacity(n);
    let mut resamples = 0usize;
    while tuples.len() < n {
        let x = state_sampler.draw(&mut rng);
        let a = action_sampler.draw(&mut rng);
        let y = plant.step(&x, &a)?;
        let l = if y.iter().all(|v| v.is_finite()) {
            cost.eval(&x, &a)?
        } else {
            f64::NAN
        };
        if !l.is_finite() {
            resamples += 1;
            if resamples > 10 * n {
                return Err(Error::TooManyResamples { resamples });
            }
            continue;
        }
        if plant.step(&x, &a)? != y {
            return Err(Error::InvalidArgument("plant step is not deterministic".into()));
        }
        tuples.push(Transition { x, a, y, l });
    }
    if resamples > 0 {
        log::warn!("replay buffer: {resamples} non-finite transitions were redrawn");
    }
    ReplayBuffer::from_tuples(
        tuples,
        BufferMeta {
            seed,
            state_sampler: *state_sampler,
            action_sampler: *action_sampler,
            resamples,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{CostKind, LtiPlant, Nonlinear2d, WeightedCost};
    use proptest::prelude::*;

    fn lti_buffer(n: usize, seed: u64) -> ReplayBuffer {
        build_buffer(
            &LtiPlant::benchmark_4d(),
            &WeightedCost::identity(CostKind::Quadratic, 4, 1),
            &SamplerSpec::uniform(-5.0, 5.0, 4),
            &SamplerSpec::gaussian(0.0, 9.0, 1),
            n,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn degenerate_origin_tuple() {
        let buf = build_buffer(
            &LtiPlant::benchmark_4d(),
            &WeightedCost::identity(CostKind::Quadratic, 4, 1),
            &SamplerSpec::uniform(0.0, 0.0, 4),
            &SamplerSpec::uniform(0.0, 0.0, 1),
            1,
            0,
        )
        .unwrap();
        let t = &buf.tuples()[0];
        assert_eq!(t.x, DVector::zeros(4));
        assert_eq!(t.a, DVector::zeros(1));
        assert_eq!(t.y, DVector::zeros(4));
        assert_eq!(t.l, 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(lti_buffer(50, 7), lti_buffer(50, 7));
        assert_ne!(lti_buffer(50, 7), lti_buffer(50, 8));
    }

    #[test]
    fn lti_buffer_statistics() {
        let buf = lti_buffer(7000, 1);
        assert_eq!(buf.len(), 7000);
        assert_eq!(buf.resamples(), 0);
        for i in 0..4 {
            let xs: Vec<f64> = buf.iter().map(|t| t.x[i]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            assert!(mean.abs() < 0.2, "coordinate {i} mean {mean}");
            assert!(xs.iter().all(|v| (-5.0..=5.0).contains(v)));
        }
        let a: Vec<f64> = buf.iter().map(|t| t.a[0]).collect();
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        let var = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (a.len() - 1) as f64;
        assert!((var - 9.0).abs() < 0.9, "action variance {var}");
    }

    #[test]
    fn nonlinear_buffer_statistics() {
        let plant = Nonlinear2d;
        let buf = build_buffer(
            &plant,
            &WeightedCost::identity(CostKind::Nonquadratic, 2, 1),
            &SamplerSpec::uniform(-5.0, 5.0, 2),
            &SamplerSpec::gaussian(0.0, 1.0, 1),
            3000,
            3,
        )
        .unwrap();
        assert_eq!(buf.resamples(), 0);
        let a: Vec<f64> = buf.iter().map(|t| t.a[0]).collect();
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        let var = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (a.len() - 1) as f64;
        assert!((var - 1.0).abs() < 0.1, "action variance {var}");
        for t in buf.iter() {
            assert!(t.l >= 0.0);
            assert_eq!(plant.step(&t.x, &t.a).unwrap(), t.y);
        }
    }

    struct Exploding;

    impl Plant for Exploding {
        fn state_dim(&self) -> usize {
            1
        }
        fn input_dim(&self) -> usize {
            1
        }
        fn step(&self, x: &DVector<f64>, _u: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(if x[0] > 0.0 { x * f64::INFINITY } else { x.clone() })
        }
    }

    #[test]
    fn non_finite_transitions_are_redrawn() {
        let cost = WeightedCost::identity(CostKind::Quadratic, 1, 1);
        let buf = build_buffer(
            &Exploding,
            &cost,
            &SamplerSpec::uniform(-1.0, 1.0, 1),
            &SamplerSpec::gaussian(0.0, 1.0, 1),
            200,
            5,
        )
        .unwrap();
        assert!(buf.resamples() > 0);
        assert!(buf.iter().all(|t| t.x[0] <= 0.0));

        let err = build_buffer(
            &Exploding,
            &cost,
            &SamplerSpec::uniform(0.5, 1.0, 1),
            &SamplerSpec::gaussian(0.0, 1.0, 1),
            3,
            5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::TooManyResamples { resamples: 31 }));
    }

    #[test]
    fn sampler_validation() {
        assert!(SamplerSpec::uniform(1.0, -1.0, 2).validate().is_err());
        assert!(SamplerSpec::gaussian(0.0, 0.0, 2).validate().is_err());
        assert!(SamplerSpec::gaussian(0.0, 1.0, 0).validate().is_err());
        let bad = build_buffer(
            &LtiPlant::benchmark_4d(),
            &WeightedCost::identity(CostKind::Quadratic, 4, 1),
            &SamplerSpec::uniform(-5.0, 5.0, 3),
            &SamplerSpec::gaussian(0.0, 9.0, 1),
            10,
            0,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn csv_round_trip_is_bitwise() {
        let buf = lti_buffer(100, 11);
        let mut bytes = Vec::new();
        buf.write_csv(&mut bytes).unwrap();
        let back = ReplayBuffer::read_csv(bytes.as_slice()).unwrap();
        assert_eq!(back, buf);
    }

    #[test]
    fn csv_rejects_empty_file() {
        assert!(matches!(ReplayBuffer::read_csv(&b""[..]), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn csv_rejects_wrong_column_count() {
        let buf = lti_buffer(3, 1);
        let mut bytes = Vec::new();
        buf.write_csv(&mut bytes).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let broken = text.replacen("index,x1,", "index,", 1);
        match ReplayBuffer::read_csv(broken.as_bytes()) {
            Err(Error::Parse { line: 2, message }) => {
                assert!(message.contains("index,x1..x4,a1..a1,y1..y4,l"), "{message}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_reports_bad_line_number() {
        let buf = lti_buffer(3, 1);
        let mut bytes = Vec::new();
        buf.write_csv(&mut bytes).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut fields: Vec<String> = lines[3].split(',').map(String::from).collect();
        fields[2] = "abc".into();
        lines[3] = fields.join(",");
        let broken = lines.join("\n");
        assert!(matches!(
            ReplayBuffer::read_csv(broken.as_bytes()),
            Err(Error::Parse { line: 4, .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn csv_round_trip_any_seed(seed in any::<u64>(), n in 1usize..20) {
            let buf = lti_buffer(n, seed);
            let mut bytes = Vec::new();
            buf.write_csv(&mut bytes).unwrap();
            prop_assert_eq!(ReplayBuffer::read_csv(bytes.as_slice()).unwrap(), buf);
        }
    }
}
