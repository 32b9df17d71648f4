# Hand-traced expected outputs for the label and descriptor extraction steps.
# Each entry: (id, raw response, expected labels, expected degenerate flag,
#              expected cleaned fields; keys omitted here are "N/A").

NA = "N/A"

FULL_TEMPLATE = (
    "Figures: [Answer: (1);(4);(5)]\n"
    "Nitrogen Isotherm: Figure 2a\n"
    "Compound: [Answer: MOF-303]\n"
    "Porosity: [Answer: BET surface area 1380 m2/g]\n"
    "Hysteresis: [Answer: No]\n"
    "Saturation: [Answer: 300 - 400 cm³/g]\n"
    "Position: [Answer: (0,0,1,0.5)]"
)

GOLDEN = [
    ("full_template", FULL_TEMPLATE, (1, 4, 5), False, {
        "Nitrogen Isotherm": "Figure 2a",
        "Compound": "MOF-303",
        "Porosity": "BET surface area 1380 m2/g",
        "Hysteresis": "No",
        "Saturation": "300 - 400 cm³/g",
        "Position": "(0,0,1,0.5)",
    }),
    ("no_isotherm_template", "Figures: [Answer: (2);(3)]\n\nNitrogen Isotherm: No", (2, 3), False, {
        "Nitrogen Isotherm": "No",
    }),
    ("missing_figures", "I cannot see the image.", (6,), False, {}),
    ("out_of_range_digits", "Figures: (2)(7)(0)", (2,), False, {}),
    ("none_of_above", "Figures: [Answer: (6)]\n\nNitrogen Isotherm: No", (6,), False, {
        "Nitrogen Isotherm": "No",
    }),
    ("bracket_noise", "Figures: [[(1)]] [(3)]\nNitrogen Isotherm: [Answer: Figure S5(b)]", (1, 3), False, {
        "Nitrogen Isotherm": "Figure S5(b)",
    }),
    ("degenerate_words", "Figures: [Answer: none of these]\nNitrogen Isotherm: No", (), True, {
        "Nitrogen Isotherm": "No",
    }),
    ("multi_digit_ignored", "Figures: (10) (4)", (4,), False, {}),
    ("digits_after_isotherm_key", "Figures: (2)\nNitrogen Isotherm: (1) Figure 3", (2,), False, {
        "Nitrogen Isotherm": "(1) Figure 3",
    }),
    ("lowercase_key", "figures: (1)", (6,), False, {}),
    ("preamble_digits_dropped", "Here is my analysis (3).\nFigures: (1);(2)", (1, 2), False, {}),
    ("figures_after_isotherm", "Nitrogen Isotherm: Figure 1 (4)\nFigures: (1)", (), True, {
        "Nitrogen Isotherm": "Figure 1 (4)",
    }),
    ("ads_des_compounds", (
        "Figures: [Answer: (1), (5)]\n"
        "Nitrogen Isotherm: [Answer: Figure 4c]\n"
        "Compound: [Answer: ads ZIF-8, des ZIF-8]\n"
        'Porosity: [Answer: "N/A"]\n'
        "Hysteresis: [Answer: I do not know]\n"
        "Saturation: [Answer: I do not know]\n"
        "Position: [Answer: (0.1,0.5,0.9,1)]"
    ), (1, 5), False, {
        "Nitrogen Isotherm": "Figure 4c",
        "Compound": "ads ZIF-8, des ZIF-8",
        "Porosity": "N/A",
        "Hysteresis": "I do not know",
        "Saturation": "I do not know",
        "Position": "(0.1,0.5,0.9,1)",
    }),
    ("charset_filter", (
        "Figures: (1)\n"
        "Nitrogen Isotherm: Fig. 3\n"
        "Compound: [Answer: Zr-MOF* (UiO-66)]\n"
        "Porosity: 1,200 m²/g\n"
        "Hysteresis: Yes\n"
        "Saturation: 550 cm³/g\n"
        "Position: (0,0.5,0.5,1); (0.5,0.5,1,1)"
    ), (1,), False, {
        "Nitrogen Isotherm": "Fig. 3",
        "Compound": "Zr-MOF (UiO-66)",
        "Porosity": "1,200 m²/g",
        "Hysteresis": "Yes",
        "Saturation": "550 cm³/g",
        "Position": "(0,0.5,0.5,1); (0.5,0.5,1,1)",
    }),
    ("key_without_space", "Figures: (1)\nNitrogen Isotherm:Figure 2", (1,), False, {}),
    ("empty", "", (6,), False, {}),
    ("first_occurrence_wins", "Figures: (1)\nNitrogen Isotherm: Figure 1\nCompound: A\nCompound: B", (1,), False, {
        "Nitrogen Isotherm": "Figure 1",
        "Compound": "A",
    }),
    ("crlf", "Figures: (2)\r\nNitrogen Isotherm: No\r\n", (2,), False, {
        "Nitrogen Isotherm": "No",
    }),
    ("markdown_bold", "**Figures:** (1);(3)\n**Nitrogen Isotherm:** Figure 2", (1, 3), False, {}),
    ("spaced_wrapper", "Figures: (1)\nNitrogen Isotherm: Figure 5\nSaturation: [ Answer : 200 to 250 cm3/g ]", (1,), False, {
        "Nitrogen Isotherm": "Figure 5",
        "Saturation": "200 to 250 cm3/g",
    }),
    ("only_invalid_digits", "Figures: (0) (7) (9)", (), True, {}),
    ("two_wrappers", "Figures: (1)\nPosition: [Answer: (0,0,0.5,0.5)] [Answer: (0.5,0,1,0.5)]", (1,), False, {
        "Position": "(0,0,0.5,0.5) (0.5,0,1,0.5)",
    }),
    ("empty_answer", "Figures: (1)\nCompound: [Answer: ]", (1,), False, {}),
    ("duplicate_choices", "Figures: (1) (1) (4)", (1, 4), False, {}),
]
