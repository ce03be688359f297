use serde::{Deserialize, Serialize};

use super::{cosine, EmbedError, Embedding};
use crate::scalar::Real;

/// Pair label: +1 for a triplet with one of its own paths, -1 for a
/// negative triplet with one of its paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Label {
    Positive,
    Negative,
}

impl TryFrom<i64> for Label {
    type Error = EmbedError;

    fn try_from(y: i64) -> Result<Self, Self::Error> {
        match y {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            other => Err(EmbedError::Label(other)),
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = EmbedError;

    fn try_from(y: i8) -> Result<Self, Self::Error> {
        Label::try_from(i64::from(y))
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        match l {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }
}

fn check_margin<T: Real>(margin: T) -> Result<(), EmbedError> {
    if margin > -T::one() && margin < T::one() {
        Ok(())
    } else {
        Err(EmbedError::Margin(margin.as_f64()))
    }
}

/// `1 - cos` for positive pairs, `max(0, cos - margin)` for negative pairs.
pub fn cosine_embedding_loss<T: Real>(
    e1: &Embedding<T>,
    e2: &Embedding<T>,
    y: Label,
    margin: T,
) -> Result<T, EmbedError> {
    check_margin(margin)?;
    let c = cosine(e1, e2)?.value;
    Ok(match y {
        Label::Positive => T::one() - c,
        Label::Negative => (c - margin).max(T::zero()),
    })
}

/// Analytic gradient of [`cosine_embedding_loss`] with respect to both
/// inputs. In the inactive hinge region (and at the kink) it is zero.
pub fn loss_gradient<T: Real>(
    e1: &Embedding<T>,
    e2: &Embedding<T>,
    y: Label,
    margin: T,
) -> Result<(Embedding<T>, Embedding<T>), EmbedError> {
    check_margin(margin)?;
    if e1.dim() != e2.dim() {
        return Err(EmbedError::DimMismatch(e1.dim(), e2.dim()));
    }
    let (n1, n2) = (e1.norm(), e2.norm());
    if n1.is_zero() || n2.is_zero() {
        return Err(EmbedError::ZeroNorm);
    }
    let c = e1.dot(e2) / (n1 * n2);
    let sign = match y {
        Label::Positive => -T::one(),
        Label::Negative if c > margin => T::one(),
        Label::Negative => {
            return Ok((Embedding::zeros(e1.dim()), Embedding::zeros(e2.dim())));
        }
    };
    let inv = T::one() / (n1 * n2);
    let (s1, s2) = (c / (n1 * n1), c / (n2 * n2));
    let g1 = e1.values.iter().zip(&e2.values).map(|(&a, &b)| sign * (b * inv - a * s1)).collect();
    let g2 = e1.values.iter().zip(&e2.values).map(|(&a, &b)| sign * (a * inv - b * s2)).collect();
    Ok((Embedding::new(g1), Embedding::new(g2)))
}
