//! Cleaning and rejection rules for raw language-model generations.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    ContainsInclude,
    ContainsDefine,
    RepeatedNewlines,
    EmptyAfterClean,
    /// The generation request failed after all retries.
    Transport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruncationRule {
    /// Cut at a follow-up `Q:`.
    QMarker,
    /// Cut at a `Note:` disclaimer.
    NoteMarker,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterOutcome {
    Accept { text: String, truncated: Option<TruncationRule> },
    Reject(RejectReason),
}

impl FilterOutcome {
    pub fn accepted_text(&self) -> Option<&str> {
        match self {
            FilterOutcome::Accept { text, .. } => Some(text),
            FilterOutcome::Reject(_) => None,
        }
    }
}

const REPEATED_NEWLINES: &str = "\n\n\n\n\n\n\n\n";
const MARKERS: [(&str, TruncationRule); 2] = [("Q:", TruncationRule::QMarker), ("Note:", TruncationRule::NoteMarker)];

/// Applies the rejection rules to `raw`, then truncates at the earliest
/// `Q:` / `Note:` marker and trims whitespace.
pub fn filter_generation(raw: &str) -> FilterOutcome {
    if raw.contains("#include") {
        return FilterOutcome::Reject(RejectReason::ContainsInclude);
    }
    if raw.contains("#define") {
        return FilterOutcome::Reject(RejectReason::ContainsDefine);
    }
    if raw.contains(REPEATED_NEWLINES) {
        return FilterOutcome::Reject(RejectReason::RepeatedNewlines);
    }
    let mut text = raw;
    let mut truncated = None;
    loop {
        let first = MARKERS.iter().filter_map(|(m, rule)| text.find(m).map(|at| (at, *rule))).min_by_key(|(at, _)| *at);
        match first {
            Some((at, rule)) => {
                text = &text[..at];
                truncated.get_or_insert(rule);
            }
            None => break,
        }
    }
    let text = text.trim();
    if text.is_empty() {
        return FilterOutcome::Reject(RejectReason::EmptyAfterClean);
    }
    FilterOutcome::Accept { text: text.to_owned(), truncated }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn accept(text: &str, truncated: Option<TruncationRule>) -> FilterOutcome {
        FilterOutcome::Accept { text: text.into(), truncated }
    }

    #[test]
    fn rejection_rules() {
        assert_eq!(
            filter_generation("The cat is smaller. #include <stdio.h>"),
            FilterOutcome::Reject(RejectReason::ContainsInclude)
        );
        assert_eq!(filter_generation("#define X 1"), FilterOutcome::Reject(RejectReason::ContainsDefine));
        assert_eq!(filter_generation("\n\n\n\n\n\n\n\n"), FilterOutcome::Reject(RejectReason::RepeatedNewlines));
        assert_eq!(filter_generation("   \n "), FilterOutcome::Reject(RejectReason::EmptyAfterClean));
    }

    #[test]
    fn truncation_rules() {
        assert_eq!(
            filter_generation("The dog is larger and white.\nQ: What is..."),
            accept("The dog is larger and white.", Some(TruncationRule::QMarker))
        );
        assert_eq!(
            filter_generation("Smaller bird, yellow beak. Note: this is generic."),
            accept("Smaller bird, yellow beak.", Some(TruncationRule::NoteMarker))
        );
        assert_eq!(filter_generation("A. Note: b Q: c"), accept("A.", Some(TruncationRule::NoteMarker)));
        assert_eq!(filter_generation("Q: nothing before"), FilterOutcome::Reject(RejectReason::EmptyAfterClean));
    }

    #[test]
    fn seven_newlines_are_fine() {
        assert_eq!(filter_generation("a\n\n\n\n\n\n\nb"), accept("a\n\n\n\n\n\n\nb", None));
    }
}
