# Copyright (c) bnfold developers.
# Distributed under the terms of the Modified BSD License.

import asyncio
import inspect
from typing import Any, Awaitable, Callable


def just_run(coro: Awaitable) -> Any:
    """Make the coroutine run, even if there is an event loop running (using nest_asyncio)"""
    if not inspect.isawaitable(coro):
        return coro
    try:
        loop = asyncio.get_running_loop()
    except RuntimeError:
        return asyncio.run(_await(coro))
    # if there is a running loop, we patch using nest_asyncio
    # to have reentrant event loops
    import nest_asyncio

    nest_asyncio.apply(loop)
    return loop.run_until_complete(coro)


async def _await(aw):
    return await aw


def run_sync(coro: Callable) -> Callable:
    """Runs a coroutine function and blocks until it has executed.

    Parameters
    ----------
    coro : coroutine function
        The coroutine function to wrap.

    Returns
    -------
    wrapped : callable
        A function returning whatever the coroutine returns.
    """

    def wrapped(*args, **kwargs):
        return just_run(coro(*args, **kwargs))

    wrapped.__doc__ = coro.__doc__
    return wrapped
