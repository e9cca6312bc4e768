//! Keyword/pattern NLU for typed human utterances.

use crate::ontology::{Intent, SemanticFrame, Slot, SlotValue, DEFAULT_ADJUST_VALUES};

const NEGATIVE: [&str; 7] = ["less", "lower", "decrease", "darken", "darker", "reduce", "dim"];
const ADJUST_VERBS: [&str; 10] =
    ["brighten", "darken", "increase", "decrease", "make", "adjust", "lower", "saturate", "raise", "reduce"];

fn intent_of(token: &str) -> Option<Intent> {
    Some(match token {
        "open" | "load" => Intent::Open,
        "close" | "done" | "bye" => Intent::Close,
        "undo" | "revert" => Intent::Undo,
        "redo" => Intent::Redo,
        t if ADJUST_VERBS.contains(&t) => Intent::Adjust,
        _ => return None,
    })
}

fn attribute_of(token: &str) -> Option<&'static str> {
    if token.starts_with("bright") || token.starts_with("dark") {
        Some("brightness")
    } else if token.starts_with("satur") || token.starts_with("color") || token.starts_with("colour") {
        Some("saturation")
    } else if token.starts_with("contrast") {
        Some("contrast")
    } else {
        None
    }
}

/// Words, with identifiers like `scene_012` kept whole and a leading sign or
/// trailing `%` kept on numbers.
fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    for (i, c) in chars.iter().enumerate() {
        let sign = (*c == '-' || *c == '+') && cur.is_empty() && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
        if c.is_alphanumeric() || *c == '_' || sign || (*c == '%' && !cur.is_empty()) {
            cur.push(*c);
        } else if !cur.is_empty() {
            tokens.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

fn number_of(token: &str) -> Option<i32> {
    let t = token.trim_end_matches('%');
    let digits = t.trim_start_matches(['-', '+']);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    t.parse().ok()
}

/// Nearest domain value, preferring values with the requested sign.
fn snap(value: i32, negative: bool, domain: &[i32]) -> Option<i32> {
    let signed: Vec<i32> = domain.iter().copied().filter(|d| (*d < 0) == negative).collect();
    let pool = if signed.is_empty() { domain } else { &signed };
    pool.iter().copied().min_by_key(|d| (i64::from(*d) - i64::from(value)).abs())
}

/// Parse text against the object vocabulary and the known scene ids with the
/// default adjust-value domain.
pub fn parse_utterance<'a>(text: &str, vocabulary: &[&str], scene_ids: impl IntoIterator<Item = &'a str>) -> SemanticFrame {
    parse_with_domain(text, vocabulary, scene_ids, &DEFAULT_ADJUST_VALUES)
}

pub fn parse_with_domain<'a>(
    text: &str,
    vocabulary: &[&str],
    scene_ids: impl IntoIterator<Item = &'a str>,
    adjust_values: &[i32],
) -> SemanticFrame {
    let tokens = tokenize(text);
    let mut frame = SemanticFrame::new();
    let scene_ids: Vec<String> = scene_ids.into_iter().map(str::to_lowercase).collect();

    let attribute = tokens.iter().find_map(|t| attribute_of(t));
    match tokens.iter().find_map(|t| intent_of(t)) {
        Some(i) => {
            frame.insert(Slot::Intent, SlotValue::Intent(i));
        }
        // "the dog's brightness by 20" still asks for an adjustment.
        None if attribute.is_some() => {
            frame.insert(Slot::Intent, SlotValue::Intent(Intent::Adjust));
        }
        None => {}
    }
    if let Some(a) = attribute {
        frame.insert(Slot::Attribute, SlotValue::Text(a.to_string()));
    }

    let object = tokens
        .iter()
        .filter_map(|t| {
            vocabulary
                .iter()
                .find(|w| **w == t.as_str() || t.strip_suffix('s').is_some_and(|s| s == **w))
        })
        // Longest word; earliest mention on ties.
        .min_by_key(|w| std::cmp::Reverse(w.len()));
    if let Some(o) = object {
        frame.insert(Slot::Object, SlotValue::Text(o.to_string()));
    }

    // Positive unless signed or accompanied by a negative-polarity word
    // ("more", "increase", "by" and the like need no special handling).
    if let Some(raw) = tokens.iter().find_map(|t| number_of(t)) {
        let negative = raw < 0 || (raw > 0 && tokens.iter().any(|t| NEGATIVE.contains(&t.as_str())));
        let magnitude = raw.abs();
        let wanted = if negative { -magnitude } else { magnitude };
        if let Some(v) = snap(wanted, negative, adjust_values) {
            frame.insert(Slot::AdjustValue, SlotValue::Int(v));
        }
    }

    if let Some(path) = tokens.iter().find(|t| scene_ids.contains(t)) {
        frame.insert(Slot::ImagePath, SlotValue::Text(path.clone()));
    }
    frame
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vision::VOCABULARY;

    fn parse(text: &str) -> SemanticFrame {
        parse_utterance(text, &VOCABULARY, ["scene_101", "scene_007"])
    }

    fn text(frame: &SemanticFrame, slot: Slot) -> Option<&str> {
        frame.get(slot).and_then(|v| v.as_text())
    }

    #[test]
    fn saturation_request_with_possessive() {
        let f = parse("increase the man's saturation by 10");
        assert_eq!(f.intent(), Some(Intent::Adjust));
        assert_eq!(text(&f, Slot::Object), Some("man"));
        assert_eq!(text(&f, Slot::Attribute), Some("saturation"));
        assert_eq!(f.get(Slot::AdjustValue).and_then(|v| v.as_int()), Some(10));
        assert_eq!(f.len(), 4);
    }

    #[test]
    fn percent_less_bright_is_negative() {
        let f = parse("make the man 30% less bright");
        assert_eq!(f.intent(), Some(Intent::Adjust));
        assert_eq!(text(&f, Slot::Object), Some("man"));
        assert_eq!(text(&f, Slot::Attribute), Some("brightness"));
        assert_eq!(f.get(Slot::AdjustValue).and_then(|v| v.as_int()), Some(-30));
    }

    #[test]
    fn no_keywords_gives_empty_frame() {
        assert!(parse("hello").is_empty());
        assert!(parse("").is_empty());
    }

    #[test]
    fn other_intents_and_paths() {
        let f = parse("Open scene_101 please");
        assert_eq!(f.intent(), Some(Intent::Open));
        assert_eq!(text(&f, Slot::ImagePath), Some("scene_101"));
        assert!(!f.contains(Slot::AdjustValue));
        assert_eq!(parse("undo that").intent(), Some(Intent::Undo));
        assert_eq!(parse("REDO").intent(), Some(Intent::Redo));
        assert_eq!(parse("I'm done, bye").intent(), Some(Intent::Close));
    }

    #[test]
    fn sign_and_snapping() {
        let v = |t: &str| parse(t).get(Slot::AdjustValue).and_then(|v| v.as_int());
        assert_eq!(v("decrease the contrast of the dog by 20"), Some(-20));
        assert_eq!(v("brightness -40 on the cat"), Some(-40));
        assert_eq!(v("more color on the boat, 33"), Some(30));
        assert_eq!(v("raise it 90"), Some(50));
        assert_eq!(v("lower it 2"), Some(-10));
    }

    #[test]
    fn object_is_longest_vocabulary_word() {
        assert_eq!(text(&parse("brighten the woman"), Slot::Object), Some("woman"));
        assert_eq!(text(&parse("darken the dogs near the car"), Slot::Object), Some("dog"));
        assert_eq!(text(&parse("the house and the cat"), Slot::Object), Some("house"));
    }

    #[test]
    fn case_insensitive_and_pure() {
        assert_eq!(parse("INCREASE THE MAN'S SATURATION BY 10"), parse("increase the man's saturation by 10"));
    }
}
