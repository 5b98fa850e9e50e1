use serde::{Deserialize, Serialize};

/// Default system prompt. The domain phrase is substituted per dataset.
pub const DEFAULT_SYSTEM_TEXT: &str = "You are tasked with detecting trauma in text segments of transcripts of genocide tribunals. Specifically, detect instances that meet the APA\u{2019}s definition of trauma. Psychological trauma, as defined by the APA, includes experiences of exposure to actual or threatened death, serious injury, or sexual violence, either directly encountered or witnessed. It also includes instances where individuals learn that the traumatic event(s) occurred to a close family member or friend. Label the text with '1' if there are indicators of trauma based on this definition, and '0' if there are no indicators of trauma. Note that trauma is rare and occurs in less than 20% of the cases. Only answer with either '0' or '1'.";

pub const DEFAULT_DOMAIN_SLOT: &str = "transcripts of genocide tribunals";

pub const ANSWER_INSTRUCTION: &str = "Only answer with either '0' or '1'.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub system_text: String,
    /// Substring of `system_text` describing the data source.
    pub domain_slot: String,
    /// Replacement for `domain_slot`; `None` leaves the text as is.
    pub domain_context: Option<String>,
    /// Negative and positive label strings.
    pub expected_labels: [String; 2],
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            system_text: DEFAULT_SYSTEM_TEXT.to_string(),
            domain_slot: DEFAULT_DOMAIN_SLOT.to_string(),
            domain_context: None,
            expected_labels: ["0".to_string(), "1".to_string()],
        }
    }
}

impl PromptTemplate {
    pub fn with_context(mut self, context: impl Into<String>) -> Self {
        self.domain_context = Some(context.into());
        self
    }

    /// Whether the system text still carries the answer-format instruction.
    pub fn has_answer_instruction(&self) -> bool {
        self.system_text.contains(ANSWER_INSTRUCTION)
    }

    pub fn system_message(&self) -> String {
        match &self.domain_context {
            Some(ctx) if !self.domain_slot.is_empty() => self.system_text.replace(&self.domain_slot, ctx),
            _ => self.system_text.clone(),
        }
    }
}

/// Returns `(system message, user message)`. The sample is passed through
/// unmodified as the user turn.
pub fn render_prompt(template: &PromptTemplate, sample_text: &str) -> (String, String) {
    (template.system_message(), sample_text.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rendering() {
        let t = PromptTemplate::default();
        let (sys, user) = render_prompt(&t, "I was wounded");
        assert!(sys.contains("exposure to actual or threatened death"));
        assert!(sys.contains(ANSWER_INSTRUCTION));
        assert_eq!(user, "I was wounded");
        assert_eq!(render_prompt(&t, "I was wounded"), (sys, user));
    }

    #[test]
    fn context_substitution() {
        let t = PromptTemplate::default().with_context("posts from an online forum");
        let (sys, _) = render_prompt(&t, "x");
        assert!(sys.contains("text segments of posts from an online forum."));
        assert!(!sys.contains(DEFAULT_DOMAIN_SLOT));
        assert_eq!(sys.replace("posts from an online forum", DEFAULT_DOMAIN_SLOT), DEFAULT_SYSTEM_TEXT);
    }

    #[test]
    fn empty_slot_leaves_text() {
        let t = PromptTemplate {
            domain_slot: String::new(),
            ..PromptTemplate::default()
        }
        .with_context("anything");
        assert_eq!(render_prompt(&t, "x").0, DEFAULT_SYSTEM_TEXT);
    }
}
