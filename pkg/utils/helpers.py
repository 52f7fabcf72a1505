import re
import unicodedata
from datetime import datetime, timedelta, timezone
from typing import FrozenSet, List, Union

# =================== TOKENIZAÇÃO ===================

_TERM_RE = re.compile(r"[^\W_]+", re.UNICODE)

STOPWORDS: FrozenSet[str] = frozenset("""
a an the and or but if of at by for with about to from in on into onto over under near
i me my mine myself we us our ours you your yours he him his she her hers it its they them their
this that these those there here is am are was were be been being has have had do does did
will would shall should can could may might must s t d ll ve re m
what which who whom whose when where why how
so too very just also not no nor as than then one ones all any some up out off again
mentioned ok okay really
""".split())

# Termos que, sozinhos, não carregam fato nenhum (cumprimentos e conversa fiada)
GREETING_TERMS: FrozenSet[str] = frozenset("""
hi hello hey thanks thank bye goodbye morning evening night good great nice see later cool
wow awesome lol haha welcome care soon talk glad hear hope well day fine doing today tonight
""".split())

CALENDAR_WORDS: FrozenSet[str] = frozenset("""
January February March April May June July August September October November December
Monday Tuesday Wednesday Thursday Friday Saturday Sunday
""".split())


def strip_accents(text: str) -> str:
    """Remove acentos mantendo as letras base"""
    normalized = unicodedata.normalize("NFKD", text)
    return "".join(ch for ch in normalized if not unicodedata.combining(ch))


def tokenize(text: str) -> List[str]:
    """Minúsculas e quebra em tudo que não é alfanumérico"""
    return _TERM_RE.findall(strip_accents(text).lower())


def content_terms(text: str) -> List[str]:
    """Tokens sem stopwords, na ordem em que aparecem"""
    return [term for term in tokenize(text) if term not in STOPWORDS]


def singularize(term: str) -> str:
    term = term.lower()
    if len(term) > 4 and term.endswith("ies"):
        return term[:-3] + "y"
    if len(term) > 3 and term.endswith("s") and not term.endswith("ss"):
        return term[:-1]
    return term


# =================== TEMPO ===================

_DURATION_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([smhd]?)\s*$", re.IGNORECASE)
_DURATION_UNITS = {"": 1, "s": 1, "m": 60, "h": 3600, "d": 86400}

DAY = 86400


def parse_timestamp(value: Union[int, float, str, datetime]) -> int:
    """Converte ISO-8601, epoch ou datetime em segundos UTC"""
    if isinstance(value, bool):
        raise ValueError(f"timestamp inválido: {value!r}")
    if isinstance(value, (int, float)):
        return int(value)
    if isinstance(value, datetime):
        moment = value
    else:
        raw = str(value).strip()
        if not raw:
            raise ValueError("timestamp vazio")
        if re.fullmatch(r"-?\d+", raw):
            return int(raw)
        try:
            moment = datetime.fromisoformat(raw.replace("Z", "+00:00"))
        except ValueError as e:
            raise ValueError(f"timestamp inválido: {raw!r}") from e
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return int(moment.timestamp())


def iso_date(timestamp: int) -> str:
    return datetime.fromtimestamp(timestamp, tz=timezone.utc).strftime("%Y-%m-%d")


def iso_datetime(timestamp: int) -> str:
    return datetime.fromtimestamp(timestamp, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def start_of_day(timestamp: int) -> int:
    return timestamp - (timestamp % DAY)


def parse_duration(value: Union[int, float, str, timedelta]) -> timedelta:
    """Aceita segundos, "30m", "6h", "7d" ou ISO-8601 simples (PT6H)"""
    if isinstance(value, timedelta):
        return value
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return timedelta(seconds=value)
    raw = str(value).strip()
    match = _DURATION_RE.match(raw)
    if match:
        amount, unit = match.groups()
        return timedelta(seconds=float(amount) * _DURATION_UNITS[unit.lower()])
    iso = re.fullmatch(r"P(?:(\d+)D)?(?:T(?:(\d+)H)?(?:(\d+)M)?(?:(\d+)S)?)?", raw.upper())
    if iso and any(iso.groups()):
        days, hours, minutes, seconds = (int(g) if g else 0 for g in iso.groups())
        return timedelta(days=days, hours=hours, minutes=minutes, seconds=seconds)
    raise ValueError(f"duração inválida: {raw!r}")
