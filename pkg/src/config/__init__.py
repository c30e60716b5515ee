from .setting import settings

__all__ = ["settings"]
