use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::corpus::Sentence;

/// Fixed-width context centred on one token. `slots[j]` is the sentence
/// index shown in column `j`, or `None` for the padding sentinel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowInstance {
    pub center: usize,
    pub slots: Vec<Option<usize>>,
    /// Relative position of each column, `-w/2 ..= w/2`; empty for width 1.
    pub positions: Vec<i64>,
}

impl WindowInstance {
    pub fn width(&self) -> usize {
        self.slots.len()
    }

    pub fn padding_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_none()).count()
    }

    pub fn padding_fraction(&self) -> f64 {
        self.padding_count() as f64 / self.width() as f64
    }

    /// Column texts, `None` for padding.
    pub fn columns<'a>(&self, s: &'a Sentence) -> Vec<Option<&'a str>> {
        self.slots
            .iter()
            .map(|slot| slot.map(|i| s.tokens[i].text.as_str()))
            .collect()
    }
}

pub fn check_window(window: usize) -> Result<(), ModelError> {
    if window == 0 || window % 2 == 0 {
        return Err(ModelError::Config(format!("window must be odd and >= 1, got {window}")));
    }
    Ok(())
}

/// One window per token of a sentence of length `len`.
pub fn windows_for_len(len: usize, window: usize) -> Result<Vec<WindowInstance>, ModelError> {
    check_window(window)?;
    let half = (window / 2) as i64;
    Ok((0..len)
        .map(|center| {
            let rel: Vec<i64> = (-half..=half).collect();
            let slots = rel
                .iter()
                .map(|&r| {
                    let j = center as i64 + r;
                    (0..len as i64).contains(&j).then_some(j as usize)
                })
                .collect();
            WindowInstance {
                center,
                slots,
                positions: if window == 1 { Vec::new() } else { rel },
            }
        })
        .collect())
}

pub fn extract_windows(s: &Sentence, window: usize) -> Result<Vec<WindowInstance>, ModelError> {
    windows_for_len(s.len(), window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Label, Token};

    fn sent(n: usize) -> Sentence {
        Sentence {
            id: "s".into(),
            tokens: (0..n).map(|i| Token::plain(format!("t{i}"), Label::NonTrigger)).collect(),
            source_date: None,
        }
    }

    #[test]
    fn boundary_padding() {
        let s = sent(3);
        let w = extract_windows(&s, 5).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[0].columns(&s), vec![None, None, Some("t0"), Some("t1"), Some("t2")]);
        assert_eq!(w[0].positions, vec![-2, -1, 0, 1, 2]);
        assert_eq!(w[2].columns(&s), vec![Some("t0"), Some("t1"), Some("t2"), None, None]);
    }

    #[test]
    fn width_one() {
        let s = sent(4);
        for (i, inst) in extract_windows(&s, 1).unwrap().iter().enumerate() {
            assert_eq!(inst.slots, vec![Some(i)]);
            assert!(inst.positions.is_empty());
        }
    }

    #[test]
    fn even_window_rejected() {
        assert!(extract_windows(&sent(2), 4).is_err());
        assert!(extract_windows(&sent(2), 0).is_err());
    }
}
