use crate::error::{data_err, Result};

/// Ordinal ego-speed categories in code order.
pub const SPEED_NAMES: [&str; 5] = ["stopped", "decelerating", "moving slow", "moving fast", "accelerating"];

pub fn encode_speed_ordinal(category: &str) -> Result<u8> {
    let c = category.trim().to_ascii_lowercase().replace('_', " ");
    SPEED_NAMES
        .iter()
        .position(|&n| n == c)
        .map(|i| i as u8)
        .ok_or_else(|| {
            data_err(format!(
                "unknown speed category `{category}`; expected one of: {}",
                SPEED_NAMES.join(", ")
            ))
        })
}
