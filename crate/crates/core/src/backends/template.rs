//! Versioned instruction template sent to layout providers.

pub const TEMPLATE_VERSION: &str = "layout-v1";

const TEMPLATE: &str = include_str!("../../assets/layout_instructions_v1.txt");

/// The raw template text; `{prompt}` marks where the user prompt goes.
pub fn template_text() -> &'static str {
    TEMPLATE
}

/// Template with the prompt substituted.
pub fn render_instructions(prompt: &str) -> String {
    TEMPLATE.replace("{prompt}", prompt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_embeds_schema_and_constraints() {
        let t = template_text();
        assert!(t.contains(r#""objects""#));
        assert!(t.contains(r#""box""#));
        assert!(t.contains("margin"));
        assert!(t.contains("completely"));
        let r = render_instructions("two cats");
        assert!(r.contains("two cats"));
        assert!(!r.contains("{prompt}"));
    }
}
