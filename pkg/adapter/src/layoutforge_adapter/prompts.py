"""Instruction templates sent to the vision-language model.

Both templates use :class:`string.Template` placeholders so that the
literal JSON braces in the schema examples survive substitution.  The
rendered text is part of the request payload, which means editing a
template invalidates the affected cache entries by construction.
"""

from __future__ import annotations

from string import Template

# Inventory pass: list what is in the image, restricted to the library
# vocabulary so the detector downstream gets usable class strings.
OBJECT_EXTRACTION = Template("""\
You label the furnishing objects visible in one interior photograph.

Work step by step. First describe the room to yourself and scan it
left to right, near to far. Then list every distinct movable object
you saw. Use only names from this vocabulary, singular form:

$categories

Count repeated objects of the same kind instead of listing them twice.
Ignore the floor, walls, ceiling, doors, windows, and anything you
cannot name with the vocabulary above.

Answer with JSON only, no prose, matching exactly:
{"objects": [{"name": "<vocabulary word>", "count": <positive integer>}]}
""")

# Placement pass: one structured judgment per detected object, plus
# support calls for pairs the geometry alone cannot settle.
LAYOUT_ANALYSIS = Template("""\
You are shown an interior photograph and a numbered list of the
objects detected in it:

$roster

For each object id, judge how it is held up in the room and estimate
its real-world size. Apply these rules strictly:

- "on_floor" is true only when the object's weight rests on the floor,
  directly or through its own legs or base. An object standing on
  another object is not on the floor.
- "hangs_from_ceiling" is true only for objects suspended from above,
  such as pendant lamps or ceiling fans. Never mark an object both
  on_floor and hangs_from_ceiling.
- "touches_wall" is the wall's index when the object rests flush
  against a wall (count walls from the leftmost visible wall, starting
  at 0), otherwise null.
- "dimensions_m" is your best estimate of [length, width, height] in
  meters for the whole object, all three strictly positive.
- "placement_clear" is false when occlusion leaves you unsure what the
  object stands on.

Where one listed object appears to rest on another but the contact is
hidden, record the pair under "occluded_support_pairs" with your best
judgment of whether the lower object really supports the upper one.
List under "unplaceable" any id whose position you cannot commit to at
all; those objects will be left out of the layout.

Answer with JSON only, no prose, matching exactly:
{"objects": [{"id": <id>, "on_floor": <bool>, "hangs_from_ceiling": <bool>,
  "touches_wall": <int or null>, "dimensions_m": [<l>, <w>, <h>],
  "placement_clear": <bool>}],
 "occluded_support_pairs": [{"lower": <id>, "upper": <id>, "supported": <bool>}],
 "unplaceable": [<id>]}
""")


def render_object_prompt(template: Template, categories: list[str]) -> str:
    return template.substitute(categories=", ".join(sorted(set(categories))))


def render_layout_prompt(template: Template, roster: list[dict]) -> str:
    lines = [
        f"  {r['id']}: {r['category']} at image box {list(r['box'])}"
        for r in roster
    ]
    return template.substitute(roster="\n".join(lines))
