/// Lowercases `text`, splits on whitespace, and emits every character that is
/// neither alphanumeric nor whitespace as a token of its own.
///
/// `"Help us asap!!!"` becomes `["help", "us", "asap", "!", "!", "!"]`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            flush(&mut word, &mut tokens);
        } else if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
        } else {
            flush(&mut word, &mut tokens);
            tokens.push(ch.to_string());
        }
    }
    flush(&mut word, &mut tokens);
    tokens
}

fn flush(word: &mut String, tokens: &mut Vec<String>) {
    if !word.is_empty() {
        tokens.push(std::mem::take(word));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation() {
        assert_eq!(tokenize("Help us asap!!!"), ["help", "us", "asap", "!", "!", "!"]);
        assert_eq!(tokenize("Good luck"), ["good", "luck"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize("  \t\n").is_empty());
    }

    #[test]
    fn keeps_digits_and_unicode_letters() {
        assert_eq!(
            tokenize("Week-3 QUIZ, Ünïcode"),
            ["week", "-", "3", "quiz", ",", "ünïcode"]
        );
        assert_eq!(tokenize("don't"), ["don", "'", "t"]);
    }
}
