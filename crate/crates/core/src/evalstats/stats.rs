use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::StatsError;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn students_t(df: f64) -> Result<StudentsT, StatsError> {
    StudentsT::new(0.0, 1.0, df).map_err(|e| StatsError::Backend(e.to_string()))
}

/// Mean and t-based confidence half-width `t(1 - a/2, n - 1) * s / sqrt(n)`.
pub fn mean_ci(values: &[f64], level: f64) -> Result<(f64, f64), StatsError> {
    let n = values.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples(n));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::BadLevel(level));
    }
    let m = mean(values);
    let sd = variance(values).sqrt();
    if sd == 0.0 {
        return Ok((m, 0.0));
    }
    let q = students_t((n - 1) as f64)?.inverse_cdf(1.0 - (1.0 - level) / 2.0);
    Ok((m, q * sd / (n as f64).sqrt()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestKind {
    /// Unequal variances, Welch–Satterthwaite degrees of freedom.
    #[default]
    Welch,
    /// Pooled variance, `n_a + n_b - 2` degrees of freedom.
    Student,
}

/// One-tailed p-value for the alternative `mean(b) > mean(a)`.
pub fn one_tailed_t_test(a: &[f64], b: &[f64], kind: TTestKind) -> Result<f64, StatsError> {
    let (na, nb) = (a.len(), b.len());
    if na < 2 || nb < 2 {
        return Err(StatsError::TooFewSamples(na.min(nb)));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (variance(a), variance(b));
    let (na_f, nb_f) = (na as f64, nb as f64);

    let (se, df) = match kind {
        TTestKind::Welch => {
            let (qa, qb) = (va / na_f, vb / nb_f);
            let se2 = qa + qb;
            let df = se2 * se2 / (qa * qa / (na_f - 1.0) + qb * qb / (nb_f - 1.0));
            (se2.sqrt(), df)
        }
        TTestKind::Student => {
            let df = na_f + nb_f - 2.0;
            let pooled = ((na_f - 1.0) * va + (nb_f - 1.0) * vb) / df;
            ((pooled * (1.0 / na_f + 1.0 / nb_f)).sqrt(), df)
        }
    };
    if se == 0.0 {
        return if ma == mb {
            Err(StatsError::Degenerate)
        } else if mb > ma {
            Ok(0.0)
        } else {
            Ok(1.0)
        };
    }
    let t = (mb - ma) / se;
    let dist = students_t(df)?;
    // upper tail, evaluated on whichever side keeps precision
    let p = if t >= 0.0 { dist.sf(t) } else { dist.cdf(-t) };
    Ok(p.clamp(0.0, 1.0))
}
