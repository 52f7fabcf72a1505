from typing import Optional


class MemoryGraphError(Exception):
    """Erro base do grafo de memória"""


class DuplicateEntryError(MemoryGraphError):
    pass


class UnknownEntryError(MemoryGraphError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "entrada desconhecida"


class InvalidEntryError(MemoryGraphError, ValueError):
    """Entrada viola dimensão, norma ou campos obrigatórios"""


class PersistenceError(MemoryGraphError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"linha {line}: {message}" if line is not None else message)


class SchemaVersionError(PersistenceError):
    pass
