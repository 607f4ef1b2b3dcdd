//! Scripted QA answerers.

use std::collections::BTreeSet;

use super::{expand_instance, QaBackend, QaRequest, QaResponse, SwapTemplate};
use crate::error::Result;

/// Gold answer for a request built from one of `templates`, found by
/// re-expanding each template with the request's candidates.
pub fn gold_for(templates: &[SwapTemplate], request: &QaRequest) -> Option<String> {
    let [c1, c2] = &request.candidates;
    templates.iter().find_map(|t| {
        let i = expand_instance(t, c1, c2);
        (i.expanded_context == request.context && i.expanded_question == request.question && i.format == request.format)
            .then_some(i.gold_name)
    })
}

fn reply(text: &str) -> Result<QaResponse> {
    Ok(QaResponse {
        answer_text: text.to_string(),
        scores: None,
    })
}

/// Always answers the gold name; unknown requests get an unresolvable answer.
pub struct RoleConsistentQa {
    id: String,
    templates: Vec<SwapTemplate>,
}

impl RoleConsistentQa {
    pub fn new(id: &str, templates: Vec<SwapTemplate>) -> Self {
        RoleConsistentQa {
            id: id.to_string(),
            templates,
        }
    }
}

impl QaBackend for RoleConsistentQa {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn answer(&self, request: &QaRequest) -> Result<QaResponse> {
        reply(&gold_for(&self.templates, request).unwrap_or_else(|| "unknown".into()))
    }
}

/// Answers whichever name sits in [NAME1] of the request it is given.
pub struct CurrentSlotOneQa {
    id: String,
}

impl CurrentSlotOneQa {
    pub fn new(id: &str) -> Self {
        CurrentSlotOneQa { id: id.to_string() }
    }
}

impl QaBackend for CurrentSlotOneQa {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn answer(&self, request: &QaRequest) -> Result<QaResponse> {
        reply(&request.candidates[0])
    }
}

/// Answers the name that held [NAME1] in the original ordering of the pair.
/// The probe always puts the lexicographically smaller name there first, so
/// this is the smaller candidate whichever way round the request comes.
pub struct OriginalSlotOneQa {
    id: String,
}

impl OriginalSlotOneQa {
    pub fn new(id: &str) -> Self {
        OriginalSlotOneQa { id: id.to_string() }
    }
}

impl QaBackend for OriginalSlotOneQa {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn answer(&self, request: &QaRequest) -> Result<QaResponse> {
        let [a, b] = &request.candidates;
        reply(a.min(b))
    }
}

/// Answers an attached name whenever exactly one candidate is attached,
/// and the gold name otherwise.
pub struct NameAttachedQa {
    id: String,
    names: BTreeSet<String>,
    templates: Vec<SwapTemplate>,
}

impl NameAttachedQa {
    pub fn new<'a>(id: &str, names: impl IntoIterator<Item = &'a str>, templates: Vec<SwapTemplate>) -> Self {
        NameAttachedQa {
            id: id.to_string(),
            names: names.into_iter().map(str::to_string).collect(),
            templates,
        }
    }
}

impl QaBackend for NameAttachedQa {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn answer(&self, request: &QaRequest) -> Result<QaResponse> {
        let attached: Vec<&String> = request.candidates.iter().filter(|c| self.names.contains(*c)).collect();
        if let [only] = attached.as_slice() {
            return reply(only);
        }
        reply(&gold_for(&self.templates, request).unwrap_or_else(|| "unknown".into()))
    }
}

/// Returns the same text for every request.
pub struct FixedAnswerQa {
    id: String,
    text: String,
}

impl FixedAnswerQa {
    pub fn new(id: &str, text: &str) -> Self {
        FixedAnswerQa {
            id: id.to_string(),
            text: text.to_string(),
        }
    }
}

impl QaBackend for FixedAnswerQa {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn answer(&self, _request: &QaRequest) -> Result<QaResponse> {
        reply(&self.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::swap::builtin_templates;

    #[test]
    fn gold_lookup() {
        let ts = builtin_templates();
        let req = expand_instance(&ts[1], "Ann", "Bea").request();
        assert_eq!(gold_for(&ts, &req).as_deref(), Some("Bea"));
        let qa = RoleConsistentQa::new("m", ts.clone());
        assert_eq!(qa.answer(&req).unwrap().answer_text, "Bea");
        let mut odd = req.clone();
        odd.question = "Who?".into();
        assert_eq!(gold_for(&ts, &odd), None);
    }
}
