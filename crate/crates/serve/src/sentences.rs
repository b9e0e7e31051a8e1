/// Tokens that end in a period without ending a sentence. Compared
/// case-insensitively without the trailing period.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "mt", "no", "vs", "etc", "e.g", "i.e", "approx", "dept", "gov",
    "govt", "inc", "ltd", "co", "fig", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec",
];

fn is_abbreviation(word: &str) -> bool {
    let w = word.trim_start_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
    ABBREVIATIONS.contains(&w.as_str()) || (w.chars().count() == 1 && w.chars().all(char::is_alphabetic))
}

/// Splits text at `.`, `!` or `?` followed by whitespace and an uppercase
/// letter (or by the end of the text). A period closing a known
/// abbreviation or a single initial never splits. Sentences are trimmed;
/// empty ones are dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if matches!(c, '.' | '!' | '?') {
            // absorb runs like "?!" or "..." and closing quotes/brackets
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j].1, '.' | '!' | '?' | '"' | '\'' | ')' | ']' | '\u{201d}') {
                j += 1;
            }
            let end = chars.get(j).map_or(text.len(), |&(p, _)| p);
            let mut k = j;
            while k < chars.len() && chars[k].1.is_whitespace() {
                k += 1;
            }
            let at_end = k == chars.len();
            let mut q = k;
            while q < chars.len() && matches!(chars[q].1, '"' | '\'' | '(' | '[' | '\u{201c}') {
                q += 1;
            }
            let boundary = at_end || (k > j && q < chars.len() && chars[q].1.is_uppercase());
            let guarded = c == '.' && j == i + 1 && {
                let before = &text[start..pos];
                let word = before.rsplit(char::is_whitespace).next().unwrap_or("");
                is_abbreviation(word)
            };
            if boundary && !guarded {
                push(&mut out, &text[start..end]);
                start = end;
            }
            i = j;
        } else {
            i += 1;
        }
    }
    push(&mut out, &text[start..]);
    out
}

fn push(out: &mut Vec<String>, s: &str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sentences() {
        assert_eq!(split_sentences("I have a cow. It gives milk."), vec!["I have a cow.", "It gives milk."]);
    }

    #[test]
    fn no_terminal_punctuation() {
        assert_eq!(split_sentences("we sell maize at the market"), vec!["we sell maize at the market"]);
    }

    #[test]
    fn abbreviation_guard() {
        assert_eq!(split_sentences("Mr. X came."), vec!["Mr. X came."]);
        assert_eq!(split_sentences("Dr. Y and J. Z left. Then rain."), vec!["Dr. Y and J. Z left.", "Then rain."]);
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        assert_eq!(split_sentences("It costs 2.5 dollars. ok then"), vec!["It costs 2.5 dollars. ok then"]);
    }

    #[test]
    fn exclamations_and_quotes() {
        assert_eq!(
            split_sentences("Really?! \"Yes.\" Fine"),
            vec!["Really?!", "\"Yes.\"", "Fine"]
        );
    }

    #[test]
    fn empty_and_whitespace() {
        assert!(split_sentences("").is_empty());
        assert!(split_sentences("   \n ").is_empty());
    }
}
