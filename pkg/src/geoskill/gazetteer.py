"""Bundled country-name / demonym / region tables used by the expert
compiler. Static data, no network dependency."""

from __future__ import annotations

import re
from functools import lru_cache

# (ISO-2 code, canonical name, aliases and demonyms)
COUNTRIES: tuple[tuple[str, str, tuple[str, ...]], ...] = (
    ("AD", "Andorra", ("andorran",)),
    ("AE", "United Arab Emirates", ("emirati", "uae")),
    ("AF", "Afghanistan", ("afghan",)),
    ("AG", "Antigua and Barbuda", ()),
    ("AL", "Albania", ("albanian",)),
    ("AM", "Armenia", ("armenian",)),
    ("AO", "Angola", ("angolan",)),
    ("AR", "Argentina", ("argentine", "argentinian")),
    ("AT", "Austria", ("austrian",)),
    ("AU", "Australia", ("australian", "aussie")),
    ("AZ", "Azerbaijan", ("azerbaijani", "azeri")),
    ("BA", "Bosnia and Herzegovina", ("bosnian",)),
    ("BB", "Barbados", ("barbadian",)),
    ("BD", "Bangladesh", ("bangladeshi",)),
    ("BE", "Belgium", ("belgian",)),
    ("BF", "Burkina Faso", ("burkinabe",)),
    ("BG", "Bulgaria", ("bulgarian",)),
    ("BH", "Bahrain", ("bahraini",)),
    ("BI", "Burundi", ("burundian",)),
    ("BJ", "Benin", ("beninese",)),
    ("BN", "Brunei", ("bruneian",)),
    ("BO", "Bolivia", ("bolivian",)),
    ("BR", "Brazil", ("brazilian",)),
    ("BS", "Bahamas", ("bahamian",)),
    ("BT", "Bhutan", ("bhutanese",)),
    ("BW", "Botswana", ("botswanan",)),
    ("BY", "Belarus", ("belarusian",)),
    ("BZ", "Belize", ("belizean",)),
    ("CA", "Canada", ("canadian",)),
    ("CD", "Democratic Republic of the Congo", ("drc",)),
    ("CF", "Central African Republic", ()),
    ("CG", "Republic of the Congo", ("congo", "congolese")),
    ("CH", "Switzerland", ("swiss",)),
    ("CI", "Ivory Coast", ("ivorian", "cote d'ivoire")),
    ("CL", "Chile", ("chilean",)),
    ("CM", "Cameroon", ("cameroonian",)),
    ("CN", "China", ("chinese",)),
    ("CO", "Colombia", ("colombian",)),
    ("CR", "Costa Rica", ("costa rican",)),
    ("CU", "Cuba", ("cuban",)),
    ("CV", "Cape Verde", ("cabo verde",)),
    ("CY", "Cyprus", ("cypriot",)),
    ("CZ", "Czech Republic", ("czech", "czechia")),
    ("DE", "Germany", ("german",)),
    ("DJ", "Djibouti", ("djiboutian",)),
    ("DK", "Denmark", ("danish", "dane")),
    ("DM", "Dominica", ()),
    ("DO", "Dominican Republic", ()),
    ("DZ", "Algeria", ("algerian",)),
    ("EC", "Ecuador", ("ecuadorian",)),
    ("EE", "Estonia", ("estonian",)),
    ("EG", "Egypt", ("egyptian",)),
    ("ER", "Eritrea", ("eritrean",)),
    ("ES", "Spain", ("spanish", "spaniard")),
    ("ET", "Ethiopia", ("ethiopian",)),
    ("FI", "Finland", ("finnish", "finn")),
    ("FJ", "Fiji", ("fijian",)),
    ("FM", "Micronesia", ("micronesian",)),
    ("FR", "France", ("french",)),
    ("GA", "Gabon", ("gabonese",)),
    ("GB", "United Kingdom", ("british", "britain", "english", "scottish", "welsh", "uk")),
    ("GD", "Grenada", ("grenadian",)),
    ("GE", "Georgia", ("georgian",)),
    ("GH", "Ghana", ("ghanaian",)),
    ("GL", "Greenland", ("greenlandic",)),
    ("GM", "Gambia", ("gambian",)),
    ("GN", "Guinea", ("guinean",)),
    ("GQ", "Equatorial Guinea", ()),
    ("GR", "Greece", ("greek", "hellenic")),
    ("GT", "Guatemala", ("guatemalan",)),
    ("GW", "Guinea-Bissau", ()),
    ("GY", "Guyana", ("guyanese",)),
    ("HN", "Honduras", ("honduran",)),
    ("HR", "Croatia", ("croatian", "croat")),
    ("HT", "Haiti", ("haitian",)),
    ("HU", "Hungary", ("hungarian",)),
    ("ID", "Indonesia", ("indonesian",)),
    ("IE", "Ireland", ("irish",)),
    ("IL", "Israel", ("israeli",)),
    ("IN", "India", ("indian",)),
    ("IQ", "Iraq", ("iraqi",)),
    ("IR", "Iran", ("iranian", "persian")),
    ("IS", "Iceland", ("icelandic",)),
    ("IT", "Italy", ("italian",)),
    ("JM", "Jamaica", ("jamaican",)),
    ("JO", "Jordan", ("jordanian",)),
    ("JP", "Japan", ("japanese",)),
    ("KE", "Kenya", ("kenyan",)),
    ("KG", "Kyrgyzstan", ("kyrgyz",)),
    ("KH", "Cambodia", ("cambodian", "khmer")),
    ("KI", "Kiribati", ()),
    ("KM", "Comoros", ("comorian",)),
    ("KP", "North Korea", ()),
    ("KR", "South Korea", ("korean",)),
    ("KW", "Kuwait", ("kuwaiti",)),
    ("KZ", "Kazakhstan", ("kazakh",)),
    ("LA", "Laos", ("lao", "laotian")),
    ("LB", "Lebanon", ("lebanese",)),
    ("LC", "Saint Lucia", ()),
    ("LI", "Liechtenstein", ()),
    ("LK", "Sri Lanka", ("sri lankan",)),
    ("LR", "Liberia", ("liberian",)),
    ("LS", "Lesotho", ("basotho",)),
    ("LT", "Lithuania", ("lithuanian",)),
    ("LU", "Luxembourg", ("luxembourgish",)),
    ("LV", "Latvia", ("latvian",)),
    ("LY", "Libya", ("libyan",)),
    ("MA", "Morocco", ("moroccan",)),
    ("MC", "Monaco", ("monegasque",)),
    ("MD", "Moldova", ("moldovan",)),
    ("ME", "Montenegro", ("montenegrin",)),
    ("MG", "Madagascar", ("malagasy",)),
    ("MH", "Marshall Islands", ()),
    ("MK", "North Macedonia", ("macedonian",)),
    ("ML", "Mali", ("malian",)),
    ("MM", "Myanmar", ("burmese", "burma")),
    ("MN", "Mongolia", ("mongolian",)),
    ("MR", "Mauritania", ("mauritanian",)),
    ("MT", "Malta", ("maltese",)),
    ("MU", "Mauritius", ("mauritian",)),
    ("MV", "Maldives", ("maldivian",)),
    ("MW", "Malawi", ("malawian",)),
    ("MX", "Mexico", ("mexican",)),
    ("MY", "Malaysia", ("malaysian",)),
    ("MZ", "Mozambique", ("mozambican",)),
    ("NA", "Namibia", ("namibian",)),
    ("NE", "Niger", ("nigerien",)),
    ("NG", "Nigeria", ("nigerian",)),
    ("NI", "Nicaragua", ("nicaraguan",)),
    ("NL", "Netherlands", ("dutch", "holland")),
    ("NO", "Norway", ("norwegian",)),
    ("NP", "Nepal", ("nepali", "nepalese")),
    ("NR", "Nauru", ()),
    ("NZ", "New Zealand", ("kiwi",)),
    ("OM", "Oman", ("omani",)),
    ("PA", "Panama", ("panamanian",)),
    ("PE", "Peru", ("peruvian",)),
    ("PG", "Papua New Guinea", ()),
    ("PH", "Philippines", ("filipino", "philippine")),
    ("PK", "Pakistan", ("pakistani",)),
    ("PL", "Poland", ("polish", "pole")),
    ("PT", "Portugal", ("portuguese",)),
    ("PW", "Palau", ()),
    ("PY", "Paraguay", ("paraguayan",)),
    ("QA", "Qatar", ("qatari",)),
    ("RO", "Romania", ("romanian",)),
    ("RS", "Serbia", ("serbian", "serb")),
    ("RU", "Russia", ("russian",)),
    ("RW", "Rwanda", ("rwandan",)),
    ("SA", "Saudi Arabia", ("saudi",)),
    ("SB", "Solomon Islands", ()),
    ("SC", "Seychelles", ("seychellois",)),
    ("SD", "Sudan", ("sudanese",)),
    ("SE", "Sweden", ("swedish", "swede")),
    ("SG", "Singapore", ("singaporean",)),
    ("SI", "Slovenia", ("slovenian", "slovene")),
    ("SK", "Slovakia", ("slovak",)),
    ("SL", "Sierra Leone", ()),
    ("SM", "San Marino", ("sammarinese",)),
    ("SN", "Senegal", ("senegalese",)),
    ("SO", "Somalia", ("somali",)),
    ("SR", "Suriname", ("surinamese",)),
    ("SS", "South Sudan", ()),
    ("ST", "Sao Tome and Principe", ()),
    ("SV", "El Salvador", ("salvadoran",)),
    ("SY", "Syria", ("syrian",)),
    ("SZ", "Eswatini", ("swazi",)),
    ("TD", "Chad", ("chadian",)),
    ("TG", "Togo", ("togolese",)),
    ("TH", "Thailand", ("thai",)),
    ("TJ", "Tajikistan", ("tajik",)),
    ("TL", "Timor-Leste", ("east timor",)),
    ("TM", "Turkmenistan", ("turkmen",)),
    ("TN", "Tunisia", ("tunisian",)),
    ("TO", "Tonga", ("tongan",)),
    ("TR", "Turkey", ("turkish", "turkiye")),
    ("TT", "Trinidad and Tobago", ("trinidadian",)),
    ("TV", "Tuvalu", ()),
    ("TW", "Taiwan", ("taiwanese",)),
    ("TZ", "Tanzania", ("tanzanian",)),
    ("UA", "Ukraine", ("ukrainian",)),
    ("UG", "Uganda", ("ugandan",)),
    ("US", "United States", ("american", "usa", "u.s.")),
    ("UY", "Uruguay", ("uruguayan",)),
    ("UZ", "Uzbekistan", ("uzbek",)),
    ("VA", "Vatican City", ("vatican",)),
    ("VC", "Saint Vincent and the Grenadines", ()),
    ("VE", "Venezuela", ("venezuelan",)),
    ("VN", "Vietnam", ("vietnamese",)),
    ("VU", "Vanuatu", ()),
    ("WS", "Samoa", ("samoan",)),
    ("YE", "Yemen", ("yemeni",)),
    ("ZA", "South Africa", ("south african",)),
    ("ZM", "Zambia", ("zambian",)),
    ("ZW", "Zimbabwe", ("zimbabwean",)),
)

# Coarse-region vocabulary: surface form -> normalized tag. Adjectival forms
# map to the same tag as the noun.
REGIONS: tuple[tuple[str, str], ...] = (
    ("pyrenees", "pyrenees"),
    ("pyrenean", "pyrenees"),
    ("alps", "alps"),
    ("alpine", "alps"),
    ("andes", "andes"),
    ("andean", "andes"),
    ("himalayas", "himalayas"),
    ("himalayan", "himalayas"),
    ("carpathians", "carpathians"),
    ("carpathian", "carpathians"),
    ("rockies", "rockies"),
    ("scandinavia", "scandinavia"),
    ("scandinavian", "scandinavia"),
    ("nordic", "nordic"),
    ("baltic", "baltic"),
    ("baltics", "baltic"),
    ("balkans", "balkans"),
    ("balkan", "balkans"),
    ("iberia", "iberia"),
    ("iberian", "iberia"),
    ("mediterranean", "mediterranean"),
    ("caribbean", "caribbean"),
    ("sahara", "sahara"),
    ("saharan", "sahara"),
    ("sahel", "sahel"),
    ("maghreb", "maghreb"),
    ("patagonia", "patagonia"),
    ("patagonian", "patagonia"),
    ("amazon", "amazon"),
    ("amazonian", "amazon"),
    ("siberia", "siberia"),
    ("siberian", "siberia"),
    ("anatolia", "anatolia"),
    ("anatolian", "anatolia"),
    ("catalonia", "catalonia"),
    ("catalan", "catalonia"),
    ("basque", "basque country"),
    ("bavaria", "bavaria"),
    ("bavarian", "bavaria"),
    ("tuscany", "tuscany"),
    ("tuscan", "tuscany"),
    ("provence", "provence"),
    ("outback", "outback"),
    ("steppe", "steppe"),
    ("pampas", "pampas"),
    ("savanna", "savanna"),
    ("savannah", "savanna"),
    ("tundra", "tundra"),
    ("taiga", "taiga"),
    ("oceania", "oceania"),
    ("polynesia", "polynesia"),
    ("polynesian", "polynesia"),
    ("melanesia", "melanesia"),
    ("micronesia", "micronesia"),
)


def _word_pattern(phrases: list[str]) -> re.Pattern[str]:
    # Longest-first alternation so e.g. "guinea-bissau" beats "guinea".
    ordered = sorted(phrases, key=len, reverse=True)
    body = "|".join(re.escape(p) for p in ordered)
    return re.compile(rf"(?<!\w)(?:{body})(?!\w)")


@lru_cache(maxsize=1)
def _country_lookup() -> tuple[re.Pattern[str], dict[str, str]]:
    table: dict[str, str] = {}
    for code, name, aliases in COUNTRIES:
        table[name.lower()] = code
        for alias in aliases:
            table[alias.lower()] = code
    return _word_pattern(list(table)), table


@lru_cache(maxsize=1)
def _region_lookup() -> tuple[re.Pattern[str], dict[str, str]]:
    table = {surface: tag for surface, tag in REGIONS}
    return _word_pattern(list(table)), table


def find_countries(text: str) -> set[str]:
    """Case-insensitive longest-match country-name and demonym lookup."""
    pattern, table = _country_lookup()
    return {table[m] for m in pattern.findall(text.lower())}


def find_region_tags(text: str) -> set[str]:
    """Normalized coarse-region tags mentioned in *text*."""
    pattern, table = _region_lookup()
    return {table[m] for m in pattern.findall(text.lower())}


def country_name(code: str) -> str | None:
    for iso, name, _aliases in COUNTRIES:
        if iso == code:
            return name
    return None
