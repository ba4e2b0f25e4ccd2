"""Prompt text for the meta model, expert agents, baselines and judges.

Task-description presets (complex questions plus the three encoder-data
tasks) ship as text assets under ``presets/``.
"""

from __future__ import annotations

from importlib import resources

DOC_SYSTEM_PROMPT = """<instructions>
1. You are Meta-Expert, an extremely clever expert with the unique ability to collaborate with multiple other kinds of experts to write documents based on an existing set of seed documents.
2. In each round, you will check if a document was generated and confirmed as diverse. If yes, then you will first present this document as your answer using the following format: <document> text of document </document>
3. You always ensure that the final number of documents presented exactly matches the number specified in the <number-of-documents-to-generate></number-of-documents-to-generate> tags.

If you have presented the last document and the number of documents you have presented equals what was specified in the <number-of-documents-to-generate></number-of-documents-to-generate> tags, please output: <END>.

Otherwise, based on the information given, what are the most logical next steps or conclusions? Make sure to provide complete information in all your communications to experts enclosed within a block of triple quotes (\"\"\") and do not shorten anything and do not write anything outside the block of triple quotes. If a document was generated in the previous step and confirmed as diverse then you first need to present just the text of this document (and not any other previous documents) as your answer using the format <document> text of document </document> before proceeding to the next round.
</instructions>"""

DOC_META_PROMPT = """<role of meta-expert>
- oversees communication between experts
- calls different kinds of experts to write diverse documents e.g. "Seed Keyword Extraction Expert", "Domain Expert", "Summarizer Expert", "Writing/Linguistics Expert", "Content Analyst Expert" etc.
- applies critical thinking and judgment skills
- always calls other experts in the right order
- assigns personas to experts if needed e.g. "You are a policy analyst specialized in ..."
- always remembers how many documents have been written so far
- always consults with "Seed Keyword Extraction Expert" to extract a set of seed keywords using the texts of all of the documents provided in the <seed documents></seed documents> tags below, giving it the full texts of those documents
- always consults with "Summarizer Expert" after each new document is written for a three-line summary, giving it the full text of the new document
- always memorizes the summaries of all documents generated so far
- always consults with "Content Analyst Expert" to compare the summary of each new generated document with the summaries of all previously generated documents in order to determine the content diversity of the new document
- if "Content Analyst Expert" determines that the summary of the new document is not sufficiently distinct with respect to the existing set of summaries, rejects this document and uses the feedback from "Content Analyst Expert" to call another expert to write a new document from scratch
- only interacts with one expert at a time and waits for the expert to reply back before calling another expert
- your interactions with each of the other experts are isolated, so include all relevant information in every call
- always keep in mind that except for you, all other experts have no memory! Therefore always provide all relevant information when contacting them
- verify that the length of the new document is exactly 400 words
- consult with at least two experts for confirmation that a document is sufficiently diverse before presenting it as your answer
- if an expert verifies that the new document is not very diverse, call a new expert to rewrite it
- aim to present all of the requested documents within 256 rounds or fewer
- avoid repeating identical questions to experts
- only you as the Meta-Expert can communicate with other experts; the other experts cannot talk among themselves
- when presenting your answer, make sure that you or any other expert(s) did not copy and paste the text of any seed document verbatim
- ensure that each document you present as an answer contains the actual text of the document in full and not its summary
- once you are certain that a document is sufficiently diverse, present it in the answer format specified below before proceeding to the next round
</role of meta-expert>

<rules for communicating with other experts>
<format> expert name: \"\"\"detailed instructions\"\"\" </format>
Example: Seed Keyword Extraction Expert: \"\"\"You are Seed Keyword Extraction Expert. Given the following set of document texts: ..., please extract a list of relevant and meaningful keywords from these documents and output them in the following format: <seed keywords> [keyword 1, keyword 2 ... keyword N] </seed keywords>.\"\"\"
</rules for communicating with other experts>

<important note>
- The expert types listed above are just examples; consult completely new kinds of experts based on the task's needs.
- Present the full text of each document in your answer and NOT its summary.
- In each round, check if a document was generated and confirmed as diverse. If yes, first present this document as your answer using the answer format below.
</important note>

answer format: <document> text of document </document>"""

DOC_TASK_TEMPLATE = (
    "Given the following set of seed documents and keywords, please write new "
    "{domain} documents each of length 400 words. Be creative and write unique "
    "{domain} documents."
)

TEMPLATE_PROMPT = """<instruction>
Given the following set of seed documents:

{seed_documents}

please write new {domain} documents each of length 400 words. Be creative and write unique {domain} documents. Note: You are not allowed to copy the text of any document in your output verbatim.
</instruction>

<injected instruction>
You are also provided with the text(s) of all documents that you have previously generated:

{previous_documents}

Please generate the next document, ensuring that it is diverse from all previously generated documents, while also being similar to the set of seed documents. Remember to present the text of each new document using the following format: <document> text of document </document>
</injected instruction>

answer format: <document> text of document </document>"""

SUMMARIZER_TEMPLATE = (
    "Please provide a three-line summary of the following document: "
    "<summarize> {document} </summarize>."
)

KEYWORD_AGENT_TEMPLATE = (
    "You are a {domain} domain specialist. Synthesize {count} random, varied and "
    "meaningful {domain} keywords. The keywords must span distinct subtopics of "
    "the domain. Output them in the following format: "
    "<seed keywords> [keyword 1, keyword 2 ... keyword N] </seed keywords>."
)

TOPIC_LABEL_TEMPLATE = (
    "You are Topic Labeling Expert. Read the following document and reply with a "
    "single short topic label (two to four words) that best describes it. Reply "
    "with the label only.\n\n<document> {document} </document>"
)

INSTRUCT_SYSTEM_PROMPT = """<instructions>
1. You are Meta-Expert, an extremely clever expert with the unique ability to collaborate with multiple other kinds of experts to create complex questions from a given document.
2. In each round, you will check if one or more question(s) were generated and confirmed as unique and diverse. If yes, then you will present each of these question(s) as your output using the following format: <questions><question>first question</question> ... <question>last question</question></questions>

If you have presented a sufficient number of diverse and complex questions from this document, please output: <END>.

Otherwise, based on the information given, what are the most logical next steps or conclusions? Make sure to provide complete information in all your communications to experts enclosed within a block of triple quotes (\"\"\") and do not shorten anything and do not write anything outside the block of triple quotes.
</instructions>"""

INSTRUCT_META_PROMPT = """<role of meta-expert>
- oversees communication between experts
- uses the following task description: {task_description}, and the text of the document given below, to call different kinds of experts to generate diverse questions
- for any given document, calls a "Document Transformation Expert" which can re-write the text of the document to better support generating diverse questions
- for any given document, calls a "Persona Suggestion Expert" to suggest a list of personas or other expert types that would be interested in the contents of that document
- for any given document, calls a "Question Generation Expert" which uses the document text (original or transformed) and the list of personas suggested in the previous round to create questions from the point of view of each suggested persona, based upon the task description
- before presenting the final set of questions, calls "Complexity Expert" which uses the document text and the set of generated questions and gives suggestions on how to modify each question in order to complicate it
- before presenting the final set of questions, calls "Question Editor Expert" which uses the suggestions of "Complexity Expert" to output a final set of re-written/modified questions
- applies critical thinking and judgment skills
- always calls other experts in the right order
- always remembers how many questions have been generated so far
- only interacts with one expert at a time and waits for the expert to reply back before calling another expert
- your interactions with each of the other experts are isolated, so you must include all relevant information in every call
- always keep in mind that except for you, all other experts have no memory! Therefore always provide all relevant information when contacting them
- consult at least two or more experts to verify that each new question that was generated is a valid and diverse question if you are uncertain
- if you or any other expert thinks that the question(s) generated are not very diverse or complex, call a new expert to rewrite them or re-do your steps
- aim to present all of the questions within 128 rounds or fewer
- avoid repeating identical information to experts
- only you as the Meta-Expert can communicate with other experts; the other experts cannot talk among themselves
- once the final set of questions is ready and you are certain that all of the generated questions are sufficiently complex and diverse and no more questions can be generated from the given document, present the final set of questions in the output format specified below
</role of meta-expert>

<rules for communicating with other experts>
<format> expert name: \"\"\"detailed instructions\"\"\" </format>
</rules for communicating with other experts>

<important note>
- The expert types listed above are just suggestions; you should also consult completely new kinds of experts based on the task requirements.
- When outputting the final list of questions the name of any Expert or Persona must not appear in the text of any question.
- Phrases like 'based on the document', 'according to the document', 'As a ...' etc., are not allowed to appear in any question.
- Ensure that only the generated questions are present in the output with no extraneous information.
</important note>

output format: <questions><question>first question</question> ... <question>last question</question></questions>"""

FREE_FORM_TEMPLATE = """{context}

Instruction: {instruction}

Write a complete, well-structured response to the instruction above."""

COT_TEMPLATE = """{context}

Instruction: {instruction}

Think through the problem step by step, showing your reasoning, then give your final answer."""

CONSTRAINED_COT_TEMPLATE = """{context}

Instruction: {instruction}

Think through the problem step by step, then give your final answer in at most {word_limit} words."""

WINRATE_JUDGE_PROMPT = """Please act as an impartial judge and evaluate the quality of the responses provided by two AI assistants to the user question displayed below. You should choose the assistant that follows the user's instructions and answers the user's question better. Your evaluation should consider factors such as the helpfulness, relevance, accuracy, depth, creativity, and level of detail of their responses. Begin your evaluation by comparing the two responses. Avoid any position biases and ensure that the order in which the responses were presented does not influence your decision. Do not allow the length of the responses to influence your evaluation. Do not favor certain names of the assistants. Be as objective as possible. Output your final verdict by strictly following this format: "[[A]]" if assistant A is better, "[[B]]" if assistant B is better, and "[[C]]" for a tie.

[User Question]
{question}

[The Start of Assistant A's Answer]
{answer_a}
[The End of Assistant A's Answer]

[The Start of Assistant B's Answer]
{answer_b}
[The End of Assistant B's Answer]"""

ACCURACY_JUDGE_PROMPT = """You are an impartial and strict judge of answer accuracy.

Given the context and the user instruction below, decide whether the assistant's response is correct and complete.

Return 1 if the response is accurate, 0 if it is inaccurate.
Do not provide any explanation; only return a single digit (1 or 0).

Context: {context}

Instruction: {instruction}

Response: {response}

Judge: Is the response accurate based on the instruction and context?"""

RELEVANCE_JUDGE_PROMPT = """You are an impartial and strict judge of context relevance.

Given the context, the user instruction, and the assistant's response, decide if the instruction-response pair is relevant to the context.

Return 1 if relevant, 0 if irrelevant.

Do not provide any explanation; only return a single digit (1 or 0).

Context: {context}

Instruction: {instruction}

Response: {response}

Judge: Is this instruction-response pair relevant to the context?"""

CATEGORY_JUDGE_PROMPT = """Given this list of categories: {categories},

Classify the following instruction-response pair into exactly one of these categories.

Return only the category name with no additional text.

Instruction: {instruction}

Response: {response}

Category: """


def load_preset(name: str) -> str:
    """Read a task-description preset shipped with the package.

    Known presets: ``complex_questions``, ``headlines``, ``fiqa_absa``,
    ``fpb``, ``task_categories``.
    """
    return (
        resources.files("metasynth.presets").joinpath(f"{name}.txt").read_text("utf-8")
    )


def default_task_categories() -> list[str]:
    return [line.strip() for line in load_preset("task_categories").splitlines() if line.strip()]
