//! Entity value grammars. Every value they produce is recovered by
//! [`crate::detect::Detector`] with the category it was drawn for.

use rand::seq::SliceRandom;
use rand::Rng;

use super::config::ValueGrammars;
use crate::detect::Gazetteer;
use crate::screen::{split_tokens, EntityCategory};

/// A generated value and the fragment used by partial-value references.
#[derive(Debug, Clone, PartialEq)]
pub struct Value {
    pub text: String,
    pub part: Option<String>,
}

fn pick<'a, R: Rng>(rng: &mut R, pool: &'a [String]) -> &'a str {
    pool.choose(rng).map(String::as_str).unwrap_or("x")
}

fn digits<R: Rng>(rng: &mut R, n: usize) -> String {
    (0..n).map(|_| char::from(b'0' + rng.gen_range(0..10u8))).collect()
}

fn lead_digits<R: Rng>(rng: &mut R, n: usize) -> String {
    let mut s = char::from(b'2' + rng.gen_range(0..8u8)).to_string();
    s.push_str(&digits(rng, n - 1));
    s
}

pub fn phone<R: Rng>(rng: &mut R) -> Value {
    let area = lead_digits(rng, 3);
    let exchange = lead_digits(rng, 3);
    let line = digits(rng, 4);
    let text = match rng.gen_range(0..7) {
        0 => format!("({area}) {exchange}-{line}"),
        1 => format!("{area}-{exchange}-{line}"),
        2 => format!("{area}.{exchange}.{line}"),
        3 => format!("+1 {area} {exchange} {line}"),
        4 => {
            let toll = ["800", "833", "844", "855", "866", "877", "888"].choose(rng).unwrap();
            format!("1-{toll}-{exchange}-{line}")
        }
        5 => {
            let first = format!("9{}", digits(rng, 4));
            let last = digits(rng, 5);
            return Value { text: format!("+91 {first} {last}"), part: Some(last) };
        }
        _ => format!("+44 20 {} {line}", lead_digits(rng, 4)),
    };
    Value { text, part: Some(line) }
}

pub fn email<R: Rng>(rng: &mut R, g: &ValueGrammars) -> Value {
    let domain = pick(rng, &g.domains);
    let text = format!("{}@{}.{}", pick(rng, &g.email_users), domain, pick(rng, &g.tlds));
    Value { text, part: Some(domain.to_string()) }
}

pub fn url<R: Rng>(rng: &mut R, g: &ValueGrammars) -> Value {
    let domain = pick(rng, &g.domains);
    let tld = pick(rng, &g.tlds);
    let path = pick(rng, &g.url_paths);
    let text = match rng.gen_range(0..4) {
        0 => format!("https://www.{domain}.{tld}/{path}"),
        1 => format!("www.{domain}.{tld}"),
        2 => format!("{domain}.{tld}/{path}"),
        _ => format!("https://{domain}.{tld}"),
    };
    Value { text, part: Some(domain.to_string()) }
}

pub fn address<R: Rng>(rng: &mut R, g: &ValueGrammars, gaz: &Gazetteer) -> Value {
    let number = rng.gen_range(1..3000);
    let street = format!("{} {}", pick(rng, &g.street_names), pick(rng, &gaz.street_suffixes));
    let city = pick(rng, &gaz.cities);
    let state = pick(rng, &gaz.states);
    let text = match rng.gen_range(0..4) {
        0 => format!("{number} {street}"),
        1 => format!("{number} {street}, {city}"),
        2 => format!("{number} {street}, {city}, {state}"),
        _ => format!("{number} {street}, {city}, {state} {}", lead_digits(rng, 5)),
    };
    Value { text, part: Some(street) }
}

pub fn date_time<R: Rng>(rng: &mut R, g: &ValueGrammars) -> Value {
    let weekday = pick(rng, &g.weekdays).to_string();
    let month = pick(rng, &g.months).to_string();
    let day = rng.gen_range(1..29);
    let hour = rng.gen_range(1..13);
    let minute = ["00", "15", "30", "45"].choose(rng).unwrap();
    let meridiem = if rng.gen_bool(0.5) { "AM" } else { "PM" };
    let month_day = format!("{month} {day}");
    match rng.gen_range(0..6) {
        0 => Value { text: format!("{weekday}, {month_day}"), part: Some(weekday) },
        1 => Value { text: format!("{month_day}, {}", rng.gen_range(2023..2027)), part: Some(month_day) },
        2 => Value {
            text: format!("{weekday}, {month_day} at {hour}:{minute} {meridiem}"),
            part: Some(weekday),
        },
        3 => Value { text: format!("{month_day} at {hour} {meridiem}"), part: Some(month_day) },
        4 => Value {
            text: format!("{}/{day}/{}", rng.gen_range(1..13), rng.gen_range(2023..2027)),
            part: None,
        },
        _ => Value {
            text: format!("{weekday} {hour}:{minute} AM - {}:{minute} PM", rng.gen_range(1..12)),
            part: Some(weekday),
        },
    }
}

pub fn value<R: Rng>(rng: &mut R, cat: EntityCategory, g: &ValueGrammars, gaz: &Gazetteer) -> Value {
    match cat {
        EntityCategory::PhoneNumber => phone(rng),
        EntityCategory::EmailAddress => email(rng, g),
        EntityCategory::Url => url(rng, g),
        EntityCategory::Address => address(rng, g, gaz),
        EntityCategory::DateTime => date_time(rng, g),
    }
}

/// True if `part`'s tokens occur contiguously in `text`'s tokens.
pub fn contains_part(text: &str, part: &str) -> bool {
    let t = split_tokens(text);
    let p = split_tokens(part);
    !p.is_empty() && t.windows(p.len()).any(|w| w == p.as_slice())
}

/// Draws a value whose text and part differ from every value in `taken`.
pub fn distinct_value<R: Rng>(
    rng: &mut R,
    cat: EntityCategory,
    g: &ValueGrammars,
    gaz: &Gazetteer,
    taken: &[Value],
) -> Value {
    let mut v = value(rng, cat, g, gaz);
    for _ in 0..200 {
        let clash = taken.iter().any(|t| {
            split_tokens(&t.text) == split_tokens(&v.text)
                || v.part.as_deref().is_some_and(|p| contains_part(&t.text, p))
                || t.part.as_deref().is_some_and(|p| contains_part(&v.text, p))
        });
        if !clash {
            break;
        }
        v = value(rng, cat, g, gaz);
    }
    v
}
