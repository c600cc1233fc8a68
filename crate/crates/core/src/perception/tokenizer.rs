//! Rule-based phrase extractor behind the mock providers.
//!
//! Document mode emits dates (`YYYY-MM-DD` when a year is present, otherwise
//! `month day`), numbers with units or currency, and capitalized multi-word
//! spans, all lowercased, in order of first occurrence. Query mode emits the
//! same plus every remaining non-stop word; `did <pronoun> <verb>` yields the
//! verb's past form.

use chrono::NaiveDate;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Document,
    Query,
}

const MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september", "october",
    "november", "december",
];

const UNITS: &[&str] = &[
    "eur", "euro", "euros", "usd", "dollars", "gbp", "pounds", "chf", "jpy", "yen", "cny", "rmb", "nights",
    "night", "days", "day", "hours", "hour", "hrs", "h", "minutes", "mins", "min", "weeks", "week", "months",
    "month", "years", "year", "km", "kilometers", "m", "meters", "miles", "kg", "g", "lbs", "l", "liters",
    "people", "persons", "guests", "adults", "tickets", "ticket", "items", "photos", "pages", "steps", "kcal",
    "calories", "points", "pcs", "rooms", "room", "bottles", "cups", "seats", "%",
];

const STOP_WORDS: &[&str] = &[
    "a", "about", "after", "again", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be",
    "because", "been", "before", "being", "between", "both", "but", "by", "can", "could", "did", "do",
    "does", "doing", "during", "each", "for", "from", "had", "has", "have", "having", "he", "her", "here",
    "hers", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "just", "me", "many", "may",
    "more", "most", "much", "my", "myself", "no", "nor", "not", "of", "off", "on", "once", "only", "or",
    "other", "our", "ours", "out", "over", "own", "please", "same", "she", "should", "so", "some", "such",
    "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "those", "through",
    "to", "too", "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours",
];

const PRONOUNS: &[&str] = &["i", "we", "you", "he", "she", "they"];

const IRREGULAR_PAST: &[(&str, &str)] = &[
    ("buy", "bought"), ("go", "went"), ("eat", "ate"), ("see", "saw"), ("have", "had"), ("get", "got"),
    ("take", "took"), ("pay", "paid"), ("meet", "met"), ("make", "made"), ("bring", "brought"),
    ("ride", "rode"), ("drive", "drove"), ("fly", "flew"), ("find", "found"), ("give", "gave"),
    ("send", "sent"), ("spend", "spent"), ("leave", "left"), ("lose", "lost"), ("read", "read"),
    ("run", "ran"), ("win", "won"), ("wear", "wore"), ("write", "wrote"), ("sell", "sold"),
    ("tell", "told"), ("think", "thought"), ("come", "came"), ("do", "did"), ("put", "put"),
    ("sit", "sat"), ("swim", "swam"), ("drink", "drank"), ("sleep", "slept"), ("keep", "kept"),
    ("hold", "held"), ("feel", "felt"), ("catch", "caught"), ("teach", "taught"), ("stand", "stood"),
];

#[derive(Debug, Clone)]
struct Token {
    text: String,
    /// Punctuation or a line break follows this token.
    break_after: bool,
    sentence_start: bool,
}

impl Token {
    fn lower(&self) -> String {
        self.text.to_lowercase()
    }

    fn capitalized(&self) -> bool {
        self.text.chars().next().is_some_and(char::is_uppercase)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '-' | '.' | ',' | ':' | '/' | '\'' | '&' | '€' | '$' | '£' | '%')
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens: Vec<Token> = Vec::new();
    let mut sentence_start = true;
    let mut current = String::new();

    let flush = |current: &mut String, tokens: &mut Vec<Token>, sentence_start: &mut bool| {
        if current.is_empty() {
            return;
        }
        // Trailing punctuation belongs to the gap, not the word.
        let mut trailing_break = false;
        let mut ends_sentence = false;
        while let Some(c) = current.chars().last() {
            if matches!(c, '.' | ',' | ':' | ';' | '\'' | '-' | '/') {
                trailing_break = true;
                ends_sentence |= c == '.';
                current.pop();
            } else {
                break;
            }
        }
        if !current.is_empty() {
            tokens.push(Token {
                text: std::mem::take(current),
                break_after: trailing_break,
                sentence_start: *sentence_start,
            });
            *sentence_start = false;
        } else if trailing_break {
            if let Some(last) = tokens.last_mut() {
                last.break_after = true;
            }
        }
        current.clear();
        if ends_sentence {
            *sentence_start = true;
        }
    };

    for c in text.chars() {
        if is_word_char(c) {
            current.push(c);
            continue;
        }
        flush(&mut current, &mut tokens, &mut sentence_start);
        if !c.is_whitespace() || c == '\n' {
            if let Some(last) = tokens.last_mut() {
                last.break_after = true;
            }
            if matches!(c, '!' | '?' | '\n') {
                sentence_start = true;
            }
        }
    }
    flush(&mut current, &mut tokens, &mut sentence_start);
    tokens
}

fn month_index(word: &str) -> Option<u32> {
    let w = word.to_lowercase();
    let w = w.trim_end_matches('.');
    if w.len() < 3 {
        return None;
    }
    MONTHS.iter().position(|m| *m == w || (w.len() >= 3 && m.starts_with(w) && (w.len() == 3 || w == "sept"))).map(|i| i as u32 + 1)
}

fn day_number(word: &str) -> Option<u32> {
    let w = word.to_lowercase();
    let digits = w
        .strip_suffix("st")
        .or_else(|| w.strip_suffix("nd"))
        .or_else(|| w.strip_suffix("rd"))
        .or_else(|| w.strip_suffix("th"))
        .unwrap_or(&w);
    if digits.is_empty() || digits.len() > 2 || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok().filter(|d| (1..=31).contains(d))
}

fn year_number(word: &str) -> Option<i32> {
    if word.len() == 4 && word.chars().all(|c| c.is_ascii_digit()) {
        word.parse().ok().filter(|y| (1900..=2100).contains(y))
    } else {
        None
    }
}

fn iso_date(word: &str) -> Option<String> {
    if word.len() != 10 {
        return None;
    }
    NaiveDate::parse_from_str(word, "%Y-%m-%d").ok().map(|d| d.format("%Y-%m-%d").to_string())
}

fn date_phrase(year: Option<i32>, month: u32, day: u32) -> Option<String> {
    match year {
        Some(y) => NaiveDate::from_ymd_opt(y, month, day).map(|d| d.format("%Y-%m-%d").to_string()),
        None => NaiveDate::from_ymd_opt(2000, month, day).map(|_| format!("{} {day}", MONTHS[month as usize - 1])),
    }
}

/// `240`, `1,000`, `892.85` -> canonical digits; `None` if not a number.
fn plain_number(word: &str) -> Option<String> {
    let cleaned: String = word.chars().filter(|&c| c != ',').collect();
    if cleaned.is_empty() || !cleaned.starts_with(|c: char| c.is_ascii_digit()) {
        return None;
    }
    let mut dots = 0;
    for c in cleaned.chars() {
        match c {
            '0'..='9' => {}
            '.' => dots += 1,
            _ => return None,
        }
    }
    (dots <= 1 && !cleaned.ends_with('.')).then_some(cleaned)
}

fn currency_amount(word: &str) -> Option<String> {
    let (code, rest) = if let Some(r) = word.strip_prefix('€') {
        ("eur", r)
    } else if let Some(r) = word.strip_prefix('$') {
        ("usd", r)
    } else if let Some(r) = word.strip_prefix('£') {
        ("gbp", r)
    } else if let Some(r) = word.strip_suffix('€') {
        ("eur", r)
    } else {
        return None;
    };
    plain_number(rest).map(|n| format!("{n} {code}"))
}

/// `240eur`, `2km`, `50%`: number glued to its unit.
fn glued_amount(word: &str) -> Option<String> {
    let split = word.find(|c: char| !(c.is_ascii_digit() || c == '.' || c == ','))?;
    let (num, unit) = word.split_at(split);
    let unit = unit.to_lowercase();
    if UNITS.contains(&unit.as_str()) {
        plain_number(num).map(|n| format!("{n} {unit}"))
    } else {
        None
    }
}

pub fn is_stop_word(w: &str) -> bool {
    STOP_WORDS.contains(&w)
}

/// Regular past tense with a small irregular table.
pub fn past_tense(verb: &str) -> String {
    if let Some((_, past)) = IRREGULAR_PAST.iter().find(|(base, _)| *base == verb) {
        return past.to_string();
    }
    let chars: Vec<char> = verb.chars().collect();
    match chars.as_slice() {
        [.., 'e'] => format!("{verb}d"),
        [.., c, 'y'] if !"aeiou".contains(*c) => format!("{}ied", &verb[..verb.len() - 1]),
        _ => format!("{verb}ed"),
    }
}

fn push_unique(out: &mut Vec<String>, phrase: String) {
    if !phrase.is_empty() && !out.contains(&phrase) {
        out.push(phrase);
    }
}

/// Extracts phrases in first-occurrence order, without a cap.
pub fn extract_phrases(text: &str, mode: Mode) -> Vec<String> {
    let tokens = tokenize(text);
    let mut out = Vec::new();
    let mut i = 0;
    let linked = |i: usize| !tokens[i].break_after && i + 1 < tokens.len();

    while i < tokens.len() {
        let tok = &tokens[i];

        if let Some(d) = iso_date(&tok.text) {
            push_unique(&mut out, d);
            i += 1;
            continue;
        }

        // Month day[, year]
        if tok.capitalized() || mode == Mode::Query {
            if let Some(month) = month_index(&tok.text) {
                if linked(i) {
                    if let Some(day) = day_number(&tokens[i + 1].text) {
                        let year = (i + 2 < tokens.len())
                            .then(|| year_number(&tokens[i + 2].text))
                            .flatten();
                        if let Some(p) = date_phrase(year, month, day) {
                            push_unique(&mut out, p);
                            i += if year.is_some() { 3 } else { 2 };
                            continue;
                        }
                    }
                }
            }
        }

        // day Month[ year]
        if let Some(day) = day_number(&tok.text) {
            if linked(i) {
                if let Some(month) = month_index(&tokens[i + 1].text) {
                    let year = (!tokens[i + 1].break_after && i + 2 < tokens.len())
                        .then(|| year_number(&tokens[i + 2].text))
                        .flatten();
                    if let Some(p) = date_phrase(year, month, day) {
                        push_unique(&mut out, p);
                        i += if year.is_some() { 3 } else { 2 };
                        continue;
                    }
                }
            }
        }

        if let Some(p) = currency_amount(&tok.text).or_else(|| glued_amount(&tok.text)) {
            push_unique(&mut out, p);
            i += 1;
            continue;
        }

        if let Some(num) = plain_number(&tok.text) {
            if linked(i) {
                let unit = tokens[i + 1].lower();
                if UNITS.contains(&unit.as_str()) {
                    push_unique(&mut out, format!("{num} {unit}"));
                    i += 2;
                    continue;
                }
            }
            if mode == Mode::Query {
                push_unique(&mut out, num);
            }
            i += 1;
            continue;
        }

        if tok.capitalized() {
            let mut end = i;
            while end + 1 < tokens.len()
                && !tokens[end].break_after
                && tokens[end + 1].capitalized()
                && !(month_index(&tokens[end + 1].text).is_some()
                    && end + 2 < tokens.len()
                    && day_number(&tokens[end + 2].text).is_some())
            {
                end += 1;
            }
            let mut start = i;
            if tok.sentence_start && end > i + 1 && is_stop_word(&tok.lower()) {
                start += 1;
            }
            if end > start {
                let span: Vec<String> = tokens[start..=end].iter().map(Token::lower).collect();
                push_unique(&mut out, span.join(" "));
                i = end + 1;
                continue;
            }
        }

        if mode == Mode::Query {
            let w = tok.lower();
            if w == "did" && i + 2 < tokens.len() && PRONOUNS.contains(&tokens[i + 1].lower().as_str()) {
                let verb = tokens[i + 2].lower();
                if verb.chars().all(char::is_alphabetic) && !is_stop_word(&verb) || verb == "own" || verb == "have" {
                    push_unique(&mut out, past_tense(&verb));
                    i += 3;
                    continue;
                }
            }
            let w: String = w.trim_matches(|c: char| !c.is_alphanumeric()).to_string();
            if w.chars().count() >= 2 && !is_stop_word(&w) && w.chars().any(char::is_alphanumeric) {
                push_unique(&mut out, w);
            }
        }
        i += 1;
    }
    out
}
