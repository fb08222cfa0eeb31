//! Rule-based sentence splitting.

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "rev", "gen", "col", "capt", "lt", "sgt",
    "hon", "mt", "ft", "no", "nos", "vol", "vols", "pp", "ch", "fig", "figs", "ed", "eds", "etc",
    "vs", "viz", "cf", "al", "ca", "approx", "dept", "est", "inc", "ltd", "co", "corp", "jan",
    "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "e.g", "i.e",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '}', '”', '’', '»'];

/// Collapse every whitespace run to one space and trim the ends.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Word (letters, digits, inner dots) ending just before byte `end`, or
/// `None` when it is the tail of a contraction such as `Paul's`.
fn word_before(text: &str, end: usize) -> Option<&str> {
    let head = &text[..end];
    match head
        .char_indices()
        .rev()
        .find(|&(_, c)| !(c.is_alphanumeric() || c == '.'))
    {
        Some((_, '\'' | '’')) => None,
        Some((i, c)) => Some(&head[i + c.len_utf8()..]),
        None => Some(head),
    }
}

fn is_abbreviation(word: &str) -> bool {
    let lower = word.to_lowercase();
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    // Initials such as "J." or "U.S".
    let letters: Vec<char> = lower.chars().filter(|c| *c != '.').collect();
    (letters.len() == 1 && letters[0].is_alphabetic()) || (lower.contains('.') && letters.len() <= 3)
}

/// Split one paragraph into sentences with whitespace normalized.
///
/// A sentence ends at `.`, `!`, `?` or `…` (plus any closing quotes or
/// brackets) followed by a space and a character that is not lowercase.
/// A period after a known abbreviation or an initial does not end one.
pub fn split_sentences(paragraph: &str) -> Vec<String> {
    let text = normalize_whitespace(paragraph);
    let is_terminal = |c: char| matches!(c, '.' | '!' | '?' | '…');
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((pos, c)) = iter.next() {
        if !is_terminal(c) {
            continue;
        }
        let mut extended = false;
        while iter.next_if(|&(_, d)| is_terminal(d)).is_some() {
            extended = true;
        }
        while iter.next_if(|&(_, d)| CLOSERS.contains(&d)).is_some() {
            extended = true;
        }
        let (end, boundary) = match iter.peek() {
            None => (text.len(), true),
            Some(&(space, ' ')) => {
                let next_ok = text[space + 1..].chars().next().is_some_and(|n| !n.is_lowercase());
                let abbreviation =
                    c == '.' && !extended && word_before(&text, pos).is_some_and(is_abbreviation);
                (space, next_ok && !abbreviation)
            }
            Some(_) => (0, false),
        };
        if boundary {
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            start = end;
        }
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_terminal_punctuation() {
        assert_eq!(
            split_sentences("The dog barked.  The cat,\nwhich slept, woke! Did it? Yes"),
            vec!["The dog barked.", "The cat, which slept, woke!", "Did it?", "Yes"]
        );
    }

    #[test]
    fn keeps_abbreviations_and_initials() {
        assert_eq!(
            split_sentences("Mr. Smith saw J. R. Brown at St. Paul's. Then he left."),
            vec!["Mr. Smith saw J. R. Brown at St. Paul's.", "Then he left."]
        );
        assert_eq!(
            split_sentences("Cats, dogs, etc. are pets. Fine."),
            vec!["Cats, dogs, etc. are pets.", "Fine."]
        );
        assert_eq!(
            split_sentences("He lives in the U.S. He likes it."),
            vec!["He lives in the U.S. He likes it."]
        );
    }

    #[test]
    fn quotes_and_ellipses() {
        assert_eq!(
            split_sentences("\"Go away!\" she said. \"Now…\" He went."),
            vec!["\"Go away!\" she said.", "\"Now…\"", "He went."]
        );
        assert_eq!(split_sentences("Wait... what? No."), vec!["Wait... what?", "No."]);
    }

    #[test]
    fn empty_input() {
        assert!(split_sentences("   \n ").is_empty());
    }
}
