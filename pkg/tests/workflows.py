"""Canonical scripted provider scripts shared by unit and acceptance tests.

Scripts interleave meta-model outputs and expert replies in exact call
order, since both go through the same provider.
"""


def words(n, tag="w"):
    return " ".join(f"{tag}{i}" for i in range(n))


def doc_text(tag, n=250):
    return f"Document about {tag}. " + words(n - 3, tag)


def happy_doc_cycle(index, analyst_reply=None, n_words=250):
    """Seven provider entries that produce one accepted document."""
    draft = doc_text(f"topic{index}", n_words)
    analyst = analyst_reply or (
        "The new summary is sufficiently distinct from all previous summaries. "
        f"category: scenario {index}"
    )
    return [
        f'Domain Expert: """Write a 400-word document about topic{index} using the seed keywords."""',
        draft,
        f'Summarizer Expert: """Please provide a three-line summary of the following document: {draft}"""',
        f"Summary line one for topic{index}.\nSummary line two.\nSummary line three.",
        'Content Analyst Expert: """Compare the summary of the latest document with the '
        'summaries of all previously generated documents and the seed keywords."""',
        analyst,
        f"<document>{draft}</document>",
    ], draft


def happy_doc_script(n_documents, n_words=250):
    """Full script for a keyword-seeded run that accepts n documents."""
    script = []
    for index in range(1, n_documents + 1):
        entries, _draft = happy_doc_cycle(index, n_words=n_words)
        script.extend(entries)
    script.append("<END>")
    return script


def seven_step_workflow_script():
    """The reference agentic flow: extraction from seed documents, a first
    accepted document, a second draft rejected as too similar, one seed
    expansion, a persona rewrite accepted, then the end token.

    Returns (script, expected) where expected carries the draft texts.
    """
    draft1 = doc_text("digital-banking", 250)
    draft2 = doc_text("digital-banking-again", 240)
    draft3 = doc_text("venture-capital", 260)
    script = [
        # (1) extraction first: seed documents were supplied
        'Seed Keyword Extraction Expert: """You are Seed Keyword Extraction Expert. '
        'Given the seed document texts, extract a list of relevant keywords in the '
        'format <seed keywords>[...]</seed keywords>."""',
        "<seed keywords>[multi-factor authentication, fraud detection, regulatory sandboxes]"
        "</seed keywords>",
        # (2) first document
        'Domain Expert: """You are a Fintech Entrepreneur. Using the keywords '
        'multi-factor authentication, fraud detection, regulatory sandboxes, write a '
        '400-word document."""',
        draft1,
        # (3) summary, then diversity check
        f'Summarizer Expert: """Please provide a three-line summary of: {draft1}"""',
        "S1a digital banking overview.\nS1b fraud controls.\nS1c sandbox policy.",
        'Content Analyst Expert: """Compare this summary with the (empty) set of prior '
        'summaries and the seed keywords."""',
        "The summary is sufficiently distinct; no prior documents exist. category: digital banking",
        "<document>" + draft1 + "</document>",
        # (4) second document, same keywords
        'Domain Expert: """Write another 400-word document with the same keywords but '
        'different content and style."""',
        draft2,
        # (5) summary and rejection
        f'Summarizer Expert: """Please provide a three-line summary of: {draft2}"""',
        "S2a digital banking once more.\nS2b fraud again.\nS2c sandboxes again.",
        'Content Analyst Expert: """Compare the new summary with the summary of document 1."""',
        "The new document is not sufficiently distinct: it is too similar to document 1 in "
        "theme and structure. It should be re-written. Suggest covering investor due "
        "diligence from a new persona.",
        # (6) seed expansion and rewrite from a fresh perspective
        'Seed Keyword Expansion Expert: """Suggest new keywords related to yet distinct '
        'from: multi-factor authentication, fraud detection, regulatory sandboxes."""',
        "<seed keywords>[decentralized finance, venture capital due diligence]</seed keywords>",
        'Domain Expert: """You are a Venture Capitalist. Using the expanded keyword set, '
        'write a 400-word document from an investor perspective."""',
        draft3,
        # (7) reassessment and acceptance
        f'Summarizer Expert: """Please provide a three-line summary of: {draft3}"""',
        "S3a VC due diligence.\nS3b DeFi risk.\nS3c investment outlook.",
        'Content Analyst Expert: """Compare the new summary with the summaries of all '
        'previously generated documents."""',
        "The new document is sufficiently distinct from document 1. category: venture capital",
        "<document>" + draft3 + "</document>",
        "<END>",
    ]
    expected = {"draft1": draft1, "draft2": draft2, "draft3": draft3}
    return script, expected


def instruction_evolution_script():
    """Instruction flow with an evaluation rejection and a complexity +
    editing pass before the final question is presented."""
    final_question = (
        "Propose a multi-step approach which encompasses epidemiological analysis, "
        "risk assessment, and stakeholder collaboration, for investigating a "
        "zoonotic disease outbreak in a rural community."
    )
    script = [
        'Document Transformation Expert: """Re-write the document to focus on the '
        'risks and controversies around genetically modified organisms."""',
        "Rewritten document focusing on genetically modified crops and their risks.",
        'Persona Suggestion Expert: """Suggest a list of readers who would find this '
        'document engaging."""',
        "- sustainability advocates\n- public health professionals\n- agricultural researchers",
        'Question Generation Expert: """Create diverse questions from the document for '
        'each suggested persona, per the task description."""',
        "<question>What are the strategies for studying genetically modified crops' "
        "effects on gut microbiome diversity?</question>",
        'Evaluation Expert: """Determine whether the proposed questions are sufficiently '
        'complex for the task."""',
        "The proposed questions are not sufficiently complex; they can be answered in one step.",
        'Complexity Expert: """Suggest ways to make each question more complex based on '
        'the document."""',
        "Transform the question into a scenario-based case study requiring multiple "
        "reasoning steps.",
        'Question Editor Expert: """Rewrite each question according to the proposed '
        'modifications."""',
        f"<question>{final_question}</question>",
        'Evaluation Expert: """Verify that the rewritten question is sufficiently complex."""',
        "The rewritten question is sufficiently complex and accepted.",
        f"<questions><question>{final_question}</question></questions>",
        "<END>",
    ]
    return script, final_question
