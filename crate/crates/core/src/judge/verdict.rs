use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    True,
    False,
    Unparsed,
}

impl Verdict {
    pub fn as_bool(self) -> Option<bool> {
        match self {
            Verdict::True => Some(true),
            Verdict::False => Some(false),
            Verdict::Unparsed => None,
        }
    }
}

/// The last sentence of `text` that contains a word character.
fn final_sentence(text: &str) -> &str {
    text.split(['.', '!', '?', '\n'])
        .rev()
        .find(|s| s.chars().any(char::is_alphanumeric))
        .unwrap_or("")
}

/// Reads a yes/no answer from the final sentence of a response; the last
/// standalone "yes" or "no" (any case) wins.
pub fn parse_verdict(response: &str) -> Verdict {
    final_sentence(response)
        .split(|c: char| !c.is_alphanumeric())
        .rev()
        .find_map(|w| {
            if w.eq_ignore_ascii_case("yes") {
                Some(Verdict::True)
            } else if w.eq_ignore_ascii_case("no") {
                Some(Verdict::False)
            } else {
                None
            }
        })
        .unwrap_or(Verdict::Unparsed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(
            parse_verdict(
                "The span \"second husband\" refers to a specific person as a distinct entity, \
                 fitting the definition of a mention. Yes"
            ),
            Verdict::True
        );
        assert_eq!(parse_verdict("This is a fragment. No."), Verdict::False);
        assert_eq!(parse_verdict("maybe"), Verdict::Unparsed);
        assert_eq!(parse_verdict(""), Verdict::Unparsed);
    }

    #[test]
    fn last_occurrence_and_word_boundaries() {
        assert_eq!(parse_verdict("Yes, or rather no"), Verdict::False);
        assert_eq!(parse_verdict("It is nobody. Yesterday"), Verdict::Unparsed);
        assert_eq!(parse_verdict("Answer: YES!"), Verdict::True);
        assert_eq!(parse_verdict("No. It is fine, so yes.\n"), Verdict::True);
    }
}
