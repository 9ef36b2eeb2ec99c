from typing import Iterable, List, Optional

from models import Activity, CategoryDescription, PoiRecord, PromptSpec

CATEGORIES_HEADER = "Activity categories:"
HINTS_HEADER = "Dataset notes:"
OBSERVATION_HEADER = "POI observation:"

DEFAULT_TASK_DESCRIPTION = (
    "You classify points of interest (POIs) from an OpenStreetMap extract by the "
    "activity a visitor most likely performs there. Each POI is described by its name "
    "and whichever features are available; many features are missing, so rely on the "
    "name when nothing else is given. Choose the three most likely activity categories "
    "from the list below and give the probability of each. Answer with exactly three "
    "lines of the form `code: probability`, listed in decreasing order of probability, "
    "and nothing else."
)

# (definition, example) per activity code
_CATEGORY_TEXT = {
    Activity.HOME: ("Being at one's own residence.",
                    "apartment building, house, residential block"),
    Activity.WORK: ("Working at a workplace or on work business.",
                    "office building, company premises, industrial site"),
    Activity.SCHOOL: ("Attending classes or other educational activities.",
                      "school, university, college, kindergarten"),
    Activity.CAREGIVING: ("Caring for another person such as a child or an elderly relative.",
                          "childcare centre, nursing home, day care"),
    Activity.BUY_GOODS: ("Shopping for goods, groceries or household items.",
                         "supermarket, mall, clothing store, marketplace"),
    Activity.BUY_SERVICES: ("Paying for a personal or professional service.",
                            "bank, hair salon, laundry, car repair"),
    Activity.BUY_MEALS: ("Buying and eating a meal or drink away from home.",
                         "restaurant, cafe, fast-food outlet, food court"),
    Activity.GENERAL_ERRANDS: ("Short errands such as posting mail or refuelling.",
                               "post office, fuel station, government office"),
    Activity.RECREATIONAL: ("Leisure, entertainment or sightseeing.",
                            "park, cinema, museum, theatre, tourist attraction"),
    Activity.EXERCISE: ("Physical exercise or sport.",
                        "gym, sports centre, swimming pool, stadium"),
    Activity.VISIT_FRIENDS: ("Visiting friends or relatives at their place.",
                             "residential visitor parking, friend's apartment"),
    Activity.HEALTH_CARE: ("Receiving medical or dental care.",
                           "hospital, clinic, doctor, dentist, pharmacy"),
    Activity.RELIGIOUS: ("Worship or another religious or community activity.",
                         "church, mosque, temple, place of worship"),
    Activity.SOMETHING_ELSE: ("Any activity not covered by the other categories.",
                              "toilets, bench, unnamed facility"),
    Activity.DROP_OFF_PICK_UP: ("Dropping off or picking up a passenger.",
                                "parking lot, drop-off zone, station forecourt"),
}

DEFAULT_CATEGORIES: List[CategoryDescription] = [
    CategoryDescription(code=code, definition=definition, example=example)
    for code, (definition, example) in _CATEGORY_TEXT.items()
]

HINT_PRESETS = {
    "arabic_names": "Some names in the 'name' column are in Arabic.",
    "public_spaces": (
        "All POIs come from public spaces, so facilities such as toilets are never "
        "classified as Home."
    ),
}


def default_prompt_spec(hints: Optional[Iterable[str]] = None,
                        presets: Optional[Iterable[str]] = None) -> PromptSpec:
    """The stock prompt, optionally extended with dataset hints"""
    dataset_hints = [HINT_PRESETS[name] for name in presets or []]
    dataset_hints.extend(hints or [])
    return PromptSpec(
        task_description=DEFAULT_TASK_DESCRIPTION,
        category_descriptions=DEFAULT_CATEGORIES,
        dataset_hints=dataset_hints,
    )


def render_observation(poi: PoiRecord) -> str:
    """
    Describe a POI in natural-language sentences.

    "The name is KFC. The amenity is restaurant." Absent features are left
    out entirely; they are never rendered as null.
    """
    sentences = []
    if poi.name:
        sentences.append(f"The name is {poi.name}.")
    for tag, value in poi.present_features().items():
        sentences.append(f"The {tag.replace('_', ' ')} is {value}.")
    return " ".join(sentences)


def build_prompt(spec: PromptSpec, poi: PoiRecord) -> str:
    """
    Assemble the prompt: task description, category descriptions,
    optional dataset hints, then the POI observation.

    Pure function; identical inputs give byte-identical prompts.
    """
    parts = [spec.task_description.strip()]

    category_lines = [
        f"{c.code.value}. {c.code.label}: {c.definition} Example: {c.example}"
        for c in spec.category_descriptions
    ]
    parts.append("\n".join([CATEGORIES_HEADER, *category_lines]))

    if spec.dataset_hints:
        parts.append("\n".join([HINTS_HEADER, *(f"- {hint}" for hint in spec.dataset_hints)]))

    parts.append(f"{OBSERVATION_HEADER}\n{render_observation(poi)}")
    return "\n\n".join(parts) + "\n"


def observation_section(prompt: str) -> str:
    """The text after the last observation header (whole prompt if absent)"""
    head, sep, tail = prompt.rpartition(OBSERVATION_HEADER)
    return tail.strip() if sep else prompt
