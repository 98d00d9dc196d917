//! Small shared helpers: stable hashing, UTC timestamps, text normalization.

use std::time::{SystemTime, UNIX_EPOCH};

/// FNV-1a over a sequence of byte slices. Stable across platforms and runs,
/// used wherever a value must be derived deterministically from identifiers
/// (synthetic services, per-cell sweep seeds).
pub fn fnv1a64(parts: &[&[u8]]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &byte in *part {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        // Separator so ("ab","c") and ("a","bc") differ.
        hash ^= 0xff;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Maps a hash to a unit-interval float in [0, 1).
pub fn unit_from_hash(hash: u64) -> f64 {
    (hash >> 11) as f64 / (1u64 << 53) as f64
}

/// Current time formatted as an ISO-8601 UTC timestamp (`2026-08-08T12:00:00Z`).
pub fn utc_now_iso8601() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format_unix_iso8601(secs as i64)
}

/// Formats seconds since the Unix epoch as ISO-8601 UTC.
pub fn format_unix_iso8601(secs: i64) -> String {
    let days = secs.div_euclid(86_400);
    let tod = secs.rem_euclid(86_400);
    let (year, month, day) = civil_from_days(days);
    format!(
        "{:04}-{:02}-{:02}T{:02}:{:02}:{:02}Z",
        year,
        month,
        day,
        tod / 3600,
        (tod % 3600) / 60,
        tod % 60
    )
}

// Howard Hinnant's days-to-civil algorithm.
fn civil_from_days(days: i64) -> (i64, u32, u32) {
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let year = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let month = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if month <= 2 { year + 1 } else { year }, month, day)
}

/// Lowercases, strips punctuation, and collapses whitespace. This is the
/// canonical identity for claims and drilling directions within a run.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_space = true;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            out.extend(ch.to_lowercase());
            last_space = false;
        } else if (ch.is_whitespace() || ch.is_ascii_punctuation()) && !last_space {
            out.push(' ');
            last_space = true;
        }
    }
    while out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Case-insensitive substring test.
pub fn contains_ci(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return true;
    }
    haystack.to_lowercase().contains(&needle.to_lowercase())
}

/// Whitespace-token count, used for synthetic token accounting.
pub fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_is_stable_and_separator_sensitive() {
        assert_eq!(fnv1a64(&[b"abc"]), fnv1a64(&[b"abc"]));
        assert_ne!(fnv1a64(&[b"ab", b"c"]), fnv1a64(&[b"a", b"bc"]));
    }

    #[test]
    fn unit_from_hash_is_in_range() {
        for seed in 0..1000u64 {
            let u = unit_from_hash(fnv1a64(&[&seed.to_le_bytes()]));
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn iso8601_known_values() {
        assert_eq!(format_unix_iso8601(0), "1970-01-01T00:00:00Z");
        assert_eq!(format_unix_iso8601(951_782_400), "2000-02-29T00:00:00Z");
        assert_eq!(format_unix_iso8601(1_735_689_600), "2025-01-01T00:00:00Z");
        assert_eq!(format_unix_iso8601(1_754_611_200), "2025-08-08T00:00:00Z");
    }

    #[test]
    fn normalize_collapses_case_punctuation_whitespace() {
        assert_eq!(
            normalize_text("  Influenza,   is CAUSED by: orthomyxoviruses. "),
            "influenza is caused by orthomyxoviruses"
        );
        assert_eq!(normalize_text("a-b"), "a b");
        assert_eq!(normalize_text(""), "");
    }

    #[test]
    fn contains_ci_basic() {
        assert!(contains_ci(
            "Neuraminidase Inhibitors work",
            "neuraminidase inhibitors"
        ));
        assert!(!contains_ci("short", "longer needle"));
    }
}
