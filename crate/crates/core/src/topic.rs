//! Topic names and filters with MQTT `+` / `#` wildcards.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopicError {
    #[error("empty topic")]
    Empty,
    #[error("wildcard in topic name {0:?}")]
    WildcardInName(String),
    #[error("'#' must be alone in the last level of {0:?}")]
    MisplacedMultiLevel(String),
    #[error("'+' must occupy a whole level in {0:?}")]
    MisplacedSingleLevel(String),
    #[error("NUL character in {0:?}")]
    Nul(String),
}

/// A validated subscription filter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicFilter(String);

impl TopicFilter {
    pub fn new(filter: impl Into<String>) -> Result<Self, TopicError> {
        let filter = filter.into();
        validate_filter(&filter)?;
        Ok(Self(filter))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn matches(&self, topic: &str) -> bool {
        matches(&self.0, topic)
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn validate_filter(filter: &str) -> Result<(), TopicError> {
    if filter.is_empty() {
        return Err(TopicError::Empty);
    }
    if filter.contains('\0') {
        return Err(TopicError::Nul(filter.into()));
    }
    let levels: Vec<&str> = filter.split('/').collect();
    for (i, level) in levels.iter().enumerate() {
        if level.contains('#') && (*level != "#" || i + 1 != levels.len()) {
            return Err(TopicError::MisplacedMultiLevel(filter.into()));
        }
        if level.contains('+') && *level != "+" {
            return Err(TopicError::MisplacedSingleLevel(filter.into()));
        }
    }
    Ok(())
}

pub fn validate_topic_name(topic: &str) -> Result<(), TopicError> {
    if topic.is_empty() {
        return Err(TopicError::Empty);
    }
    if topic.contains('\0') {
        return Err(TopicError::Nul(topic.into()));
    }
    if topic.contains(['+', '#']) {
        return Err(TopicError::WildcardInName(topic.into()));
    }
    Ok(())
}

/// Whether `topic` (wildcard-free) matches `filter`.
///
/// `#` also matches the parent level, so `a/#` matches `a`. Topics starting
/// with `$` are not matched by filters starting with a wildcard.
pub fn matches(filter: &str, topic: &str) -> bool {
    if topic.starts_with('$') && (filter.starts_with('+') || filter.starts_with('#')) {
        return false;
    }
    let mut f = filter.split('/');
    let mut t = topic.split('/');
    loop {
        match (f.next(), t.next()) {
            (Some("#"), _) => return true,
            (Some("+"), Some(_)) => {}
            (Some(fl), Some(tl)) if fl == tl => {}
            (None, None) => return true,
            _ => return false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_level_wildcard() {
        assert!(matches("a/+", "a/b"));
        assert!(!matches("a/+", "a/b/c"));
        assert!(!matches("a/+", "a"));
        assert!(matches("a/+", "a/"));
        assert!(matches("+/+", "/x"));
        assert!(matches("+/b/+", "a/b/c"));
    }

    #[test]
    fn multi_level_wildcard() {
        assert!(matches("a/#", "a/b/c"));
        assert!(matches("a/#", "a"));
        assert!(matches("#", "a/b"));
        assert!(!matches("a/#", "b/a"));
        assert!(!matches("a/b/#", "a"));
    }

    #[test]
    fn exact_levels() {
        assert!(matches("a/b", "a/b"));
        assert!(!matches("a/b", "a/b/c"));
        assert!(!matches("a/b/c", "a/b"));
        assert!(!matches("A", "a"));
    }

    #[test]
    fn dollar_topics_hidden_from_leading_wildcards() {
        assert!(!matches("#", "$SYS/x"));
        assert!(!matches("+/x", "$SYS/x"));
        assert!(matches("$SYS/#", "$SYS/x"));
    }

    #[test]
    fn filter_validation() {
        for ok in ["a", "a/+", "+", "#", "a/#", "+/+/#", "/", "a//b"] {
            assert!(TopicFilter::new(ok).is_ok(), "{ok}");
        }
        assert_eq!(TopicFilter::new(""), Err(TopicError::Empty));
        assert!(matches!(
            validate_filter("a/#/b"),
            Err(TopicError::MisplacedMultiLevel(_))
        ));
        assert!(matches!(
            validate_filter("a#"),
            Err(TopicError::MisplacedMultiLevel(_))
        ));
        assert!(matches!(
            validate_filter("a/b+"),
            Err(TopicError::MisplacedSingleLevel(_))
        ));
    }

    #[test]
    fn topic_name_validation() {
        assert!(validate_topic_name("a/b").is_ok());
        assert!(validate_topic_name("a/+").is_err());
        assert!(validate_topic_name("#").is_err());
        assert!(validate_topic_name("").is_err());
    }
}
