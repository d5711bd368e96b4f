//! Three-parameter tokenization of transferable rights.
//!
//! A token carries nothing but `total_units`, `transfer_units` and a
//! `pegging_rate`; everything else about the transferred right lives in the
//! contract repository. A zero pegging rate marks a non-divisible right, a
//! zero total marks unlimited availability.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational::Rational;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("UnitsExceedTotal: transfer_units {transfer} exceed total_units {total}")]
    UnitsExceedTotal { transfer: Rational, total: u64 },
    #[error("FractionalNonDivisible: non-divisible rights transfer in whole units, got {0}")]
    FractionalNonDivisible(Rational),
    #[error("NonPositiveUnits: transfer quantity must be positive, got {0}")]
    NonPositiveUnits(Rational),
    #[error("NegativeRate: pegging rate cannot be negative, got {0}")]
    NegativeRate(Rational),
    #[error("ZeroTotal: bearer-share rate needs at least one outstanding unit")]
    ZeroTotal,
    #[error("RedeemedExceedsIssued: redeemed {redeemed} exceeds issued {issued}")]
    RedeemedExceedsIssued { issued: u64, redeemed: u64 },
    #[error("NotDivisible: operation requires a positive pegging rate")]
    NotDivisible,
    #[error("QuantityMismatch: split quantities must sum to the transfer units")]
    QuantityMismatch,
}

/// The three-parameter token record.
///
/// `total_units = 0` means unlimited or irrelevant; `pegging_rate = 0`
/// marks a non-divisible right whose transfer units must be whole.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMetadata {
    #[serde(rename = "tu")]
    pub total_units: u64,
    #[serde(rename = "xu")]
    pub transfer_units: Rational,
    #[serde(rename = "pr")]
    pub pegging_rate: Rational,
}

/// Validate and build a token record.
pub fn make_token(
    total_units: u64,
    transfer_units: Rational,
    pegging_rate: Rational,
) -> Result<TokenMetadata, TokenError> {
    if !transfer_units.is_positive() {
        return Err(TokenError::NonPositiveUnits(transfer_units));
    }
    if pegging_rate.is_negative() {
        return Err(TokenError::NegativeRate(pegging_rate));
    }
    if pegging_rate.is_zero() && !transfer_units.is_integer() {
        return Err(TokenError::FractionalNonDivisible(transfer_units));
    }
    if total_units > 0 && transfer_units > Rational::integer(total_units as i128) {
        return Err(TokenError::UnitsExceedTotal {
            transfer: transfer_units,
            total: total_units,
        });
    }
    Ok(TokenMetadata {
        total_units,
        transfer_units,
        pegging_rate,
    })
}

/// A right is divisible exactly when its pegging rate is positive.
pub fn is_divisible(token: &TokenMetadata) -> bool {
    token.pegging_rate.is_positive()
}

/// Bearer-share rate: one share owns 1/total of the company.
pub fn bearer_share_rate(current_total: u64) -> Result<Rational, TokenError> {
    if current_total == 0 {
        return Err(TokenError::ZeroTotal);
    }
    Ok(Rational::new(1, current_total as i128).expect("non-zero denominator"))
}

/// Outstanding units after redemption, the `total_units` for the next issue.
pub fn track_total_units(issued: u64, redeemed: u64) -> Result<u64, TokenError> {
    if redeemed > issued {
        return Err(TokenError::RedeemedExceedsIssued { issued, redeemed });
    }
    Ok(issued - redeemed)
}

/// Split a divisible token across several outputs. Children inherit the
/// total and rate; quantities must be positive and sum exactly.
pub fn split_token(
    token: &TokenMetadata,
    quantities: &[Rational],
) -> Result<Vec<TokenMetadata>, TokenError> {
    if !is_divisible(token) {
        return Err(TokenError::NotDivisible);
    }
    if quantities.is_empty() || quantities.iter().any(|q| !q.is_positive()) {
        return Err(TokenError::QuantityMismatch);
    }
    let sum = quantities.iter().fold(Rational::zero(), |acc, q| acc + *q);
    if sum != token.transfer_units {
        return Err(TokenError::QuantityMismatch);
    }
    Ok(quantities
        .iter()
        .map(|q| TokenMetadata {
            total_units: token.total_units,
            transfer_units: *q,
            pegging_rate: token.pegging_rate,
        })
        .collect())
}

/// Fraction of the underlying transferred: units × rate. Non-divisible
/// rights transfer the whole named right, not a fraction.
pub fn token_value(token: &TokenMetadata) -> Result<Rational, TokenError> {
    if !is_divisible(token) {
        return Err(TokenError::NotDivisible);
    }
    Ok(token.transfer_units * token.pegging_rate)
}
