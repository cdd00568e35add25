//! Structured parsing of model responses.
//!
//! Evaluator and judge prompts instruct the model to answer in one of a few
//! fixed formats ("Score: <k>/5", "Similarity score: <k>/5", yes/no,
//! true/false). Parsing is lenient about surrounding prose and casing but
//! strict about the score range: out-of-range and fractional scores are
//! parse errors, never clamped.

use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};

/// Response formats understood by [`parse_score`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorePattern {
    /// "Score: <k>/5", k an integer 0-5, normalized to k/5.
    Score5,
    /// "Similarity score: <k>/5", same normalization.
    Similarity5,
    /// First standalone yes/no.
    YesNo,
    /// First standalone true/false.
    TrueFalse,
}

/// Outcome of [`parse_score`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParsedValue {
    /// Normalized fraction in `[0, 1]`.
    Score(f64),
    /// Boolean verdict.
    Flag(bool),
}

impl ParsedValue {
    pub fn as_score(&self) -> Option<f64> {
        match self {
            ParsedValue::Score(s) => Some(*s),
            ParsedValue::Flag(_) => None,
        }
    }

    pub fn as_flag(&self) -> Option<bool> {
        match self {
            ParsedValue::Flag(b) => Some(*b),
            ParsedValue::Score(_) => None,
        }
    }
}

fn score5_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bscore\s*:\s*(\d+)\s*/\s*5").unwrap())
}

fn similarity5_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bsimilarity\s+score\s*:\s*(\d+)\s*/\s*5").unwrap())
}

fn yes_no_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(yes|no)\b").unwrap())
}

fn true_false_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(true|false)\b").unwrap())
}

fn extract_fraction(re: &Regex, text: &str, what: &str) -> Result<f64> {
    let caps = re
        .captures(text)
        .ok_or_else(|| Error::Parse(format!("no \"{what}: <k>/5\" found in response")))?;
    let digits = caps.get(1).unwrap().as_str();
    let k: u32 = digits
        .parse()
        .map_err(|_| Error::Parse(format!("unreadable {what} integer '{digits}'")))?;
    if k > 5 {
        return Err(Error::Parse(format!(
            "{what} {k}/5 is out of the 0-5 range"
        )));
    }
    Ok(f64::from(k) / 5.0)
}

/// "Score: <k>/5" anywhere in the text, first match wins.
pub fn parse_score5(text: &str) -> Result<f64> {
    extract_fraction(score5_re(), text, "score")
}

/// "Similarity score: <k>/5" anywhere in the text, first match wins.
pub fn parse_similarity5(text: &str) -> Result<f64> {
    extract_fraction(similarity5_re(), text, "similarity score")
}

/// First standalone yes/no (case-insensitive) in the text.
pub fn parse_yes_no(text: &str) -> Result<bool> {
    let caps = yes_no_re()
        .captures(text)
        .ok_or_else(|| Error::Parse("no yes/no verdict found in response".into()))?;
    Ok(caps.get(1).unwrap().as_str().eq_ignore_ascii_case("yes"))
}

/// First standalone true/false (case-insensitive) in the text.
pub fn parse_true_false(text: &str) -> Result<bool> {
    let caps = true_false_re()
        .captures(text)
        .ok_or_else(|| Error::Parse("no true/false verdict found in response".into()))?;
    Ok(caps.get(1).unwrap().as_str().eq_ignore_ascii_case("true"))
}

/// Unified entry point over all response formats.
pub fn parse_score(text: &str, pattern: ScorePattern) -> Result<ParsedValue> {
    match pattern {
        ScorePattern::Score5 => parse_score5(text).map(ParsedValue::Score),
        ScorePattern::Similarity5 => parse_similarity5(text).map(ParsedValue::Score),
        ScorePattern::YesNo => parse_yes_no(text).map(ParsedValue::Flag),
        ScorePattern::TrueFalse => parse_true_false(text).map(ParsedValue::Flag),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_the_documented_formats() {
        assert_eq!(parse_score5("Score: 4/5 because ...").unwrap(), 0.8);
        assert_eq!(parse_score5("score: 0/5").unwrap(), 0.0);
        assert_eq!(parse_similarity5("similarity score: 3/5").unwrap(), 0.6);
        assert_eq!(
            parse_similarity5("Similarity score: 5/5. Both answers agree.").unwrap(),
            1.0
        );
        assert!(parse_yes_no("Yes, a similar statement exists.").unwrap());
        assert!(!parse_yes_no("The verdict is NO.").unwrap());
        assert!(parse_true_false("I believe this is True.").unwrap());
        assert!(!parse_true_false("false").unwrap());
    }

    #[test]
    fn accepts_whitespace_and_case_variants() {
        for text in [
            "SCORE: 2/5",
            "Score:2/5",
            "Score : 2 / 5",
            "the final Score:  2/5 stands",
            "\n\nScore: 2/5\n",
        ] {
            assert_eq!(parse_score5(text).unwrap(), 0.4, "failed on {text:?}");
        }
    }

    #[test]
    fn rejects_out_of_range_and_fractional_scores() {
        assert!(parse_score5("Score: 6/5").is_err());
        assert!(parse_score5("Score: 12/5").is_err());
        assert!(parse_score5("Score: -1/5").is_err());
        assert!(parse_score5("Score: 4.5/5").is_err());
        assert!(parse_score5("the score was four out of five").is_err());
        assert!(parse_score5("").is_err());
    }

    #[test]
    fn first_match_wins() {
        assert_eq!(parse_score5("Score: 3/5 ... Score: 5/5").unwrap(), 0.6);
        // an out-of-range first match is a parse error, not skipped
        assert!(parse_score5("Score: 9/5 ... Score: 2/5").is_err());
        assert!(parse_yes_no("yes or no? I say no").unwrap());
    }

    #[test]
    fn unified_entry_point_matches_the_specialized_parsers() {
        assert_eq!(
            parse_score("Score: 4/5", ScorePattern::Score5).unwrap(),
            ParsedValue::Score(0.8)
        );
        assert_eq!(
            parse_score("no.", ScorePattern::YesNo).unwrap(),
            ParsedValue::Flag(false)
        );
        assert!(parse_score("nothing here", ScorePattern::TrueFalse).is_err());
    }

    proptest! {
        // grammar fuzz: any prefix/suffix around a valid score line parses to
        // the embedded value as long as the noise contains no earlier match
        #[test]
        fn score_survives_surrounding_noise(
            k in 0u32..=5,
            prefix in "[ \t A-Za-z,.!?]{0,40}",
            suffix in "(\\PC|\n){0,60}",
        ) {
            prop_assume!(!score5_re().is_match(&prefix));
            // the word boundary before "Score" is load-bearing: "subscore:"
            // must not match, so the prefix is separated by a space
            let text = format!("{prefix} Score: {k}/5{suffix}");
            prop_assert_eq!(parse_score5(&text).unwrap(), f64::from(k) / 5.0);
        }

        // never panics on arbitrary input, only errors
        #[test]
        fn parser_never_panics(text in "(\\PC|\n|\t){0,200}") {
            let _ = parse_score5(&text);
            let _ = parse_similarity5(&text);
            let _ = parse_yes_no(&text);
            let _ = parse_true_false(&text);
        }
    }
}
