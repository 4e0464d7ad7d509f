use super::DataError;

/// Lowercases, splits on Unicode whitespace, and emits every
/// non-alphanumeric character as its own token.
pub fn tokenize(text: &str) -> Result<Vec<String>, DataError> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            flush(&mut current, &mut tokens);
        } else if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            flush(&mut current, &mut tokens);
            tokens.push(ch.to_lowercase().collect());
        }
    }
    flush(&mut current, &mut tokens);
    if tokens.is_empty() {
        return Err(DataError::EmptySentence);
    }
    Ok(tokens)
}

fn flush(current: &mut String, tokens: &mut Vec<String>) {
    if !current.is_empty() {
        tokens.push(std::mem::take(current));
    }
}

/// Canonical string for a tokenized sentence; used as the graph vertex key.
pub fn sentence_key(tokens: &[String]) -> String {
    tokens.join(" ")
}
